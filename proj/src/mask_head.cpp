#include "ctseg/mask_head.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ctseg/rng.hpp"

namespace ctseg {

std::string head_family_name(HeadFamily f) {
  switch (f) {
    case HeadFamily::resnet_basic: return "resnet_basic";
    case HeadFamily::resnet_bottleneck: return "resnet_bottleneck";
    case HeadFamily::resnet_bottleneck_quarter: return "resnet_bottleneck_quarter";
    case HeadFamily::hourglass: return "hourglass";
    case HeadFamily::fully_connected: return "fully_connected";
  }
  throw std::invalid_argument("unknown head family");
}

HeadFamily head_family_from_name(const std::string& name) {
  if (name == "resnet_basic") return HeadFamily::resnet_basic;
  if (name == "resnet_bottleneck") return HeadFamily::resnet_bottleneck;
  if (name == "resnet_bottleneck_quarter")
    return HeadFamily::resnet_bottleneck_quarter;
  if (name == "hourglass") return HeadFamily::hourglass;
  if (name == "fully_connected") return HeadFamily::fully_connected;
  throw std::invalid_argument("unknown head family '" + name + "'");
}

std::string head_layer_kind_name(HeadLayerKind k) {
  switch (k) {
    case HeadLayerKind::conv: return "conv";
    case HeadLayerKind::proj: return "proj";
    case HeadLayerKind::norm: return "norm";
    case HeadLayerKind::act: return "act";
    case HeadLayerKind::down: return "down";
    case HeadLayerKind::up: return "up";
    case HeadLayerKind::add: return "add";
    case HeadLayerKind::flatten: return "flatten";
    case HeadLayerKind::fc: return "fc";
    case HeadLayerKind::reshape: return "reshape";
  }
  throw std::invalid_argument("unknown layer kind");
}

int MaskHeadSpec::input_size() const {
  if (family == HeadFamily::fully_connected) return fc_size;
  if (rows.empty()) throw std::runtime_error("mask-head spec has no rows");
  return rows.front().spatial;
}

namespace {

bool is_single_conv_row(const BlockRow& r) {
  return r.repeat == 1 && r.channels.size() == 1;
}

}  // namespace

void MaskHeadSpec::validate() const {
  if (output_channels != 1)
    throw std::invalid_argument("mask head must emit exactly 1 channel");
  if (family == HeadFamily::fully_connected) {
    if (!rows.empty())
      throw std::invalid_argument("fully_connected heads take no block table");
    if (named_depth < 1)
      throw std::invalid_argument("fully_connected head needs >= 1 layer");
    if (fc_hidden_width < 1 && named_depth > 1)
      throw std::invalid_argument("fully_connected head needs a hidden width");
    if (fc_size < 1) throw std::invalid_argument("bad fc_size");
    return;
  }

  if (rows.size() < 2)
    throw std::invalid_argument("head spec needs a stem row plus block rows");
  if (!is_single_conv_row(rows.front()))
    throw std::invalid_argument("first row must be the single stem conv");
  const int s = rows.front().spatial;
  if (s < 1) throw std::invalid_argument("bad stem spatial size");

  const size_t block_end =
      family == HeadFamily::hourglass ? rows.size() - 1 : rows.size();
  if (family == HeadFamily::hourglass) {
    if (rows.size() < 3 || !is_single_conv_row(rows.back()) ||
        rows.back().spatial != s)
      throw std::invalid_argument(
          "hourglass spec must end with one final conv row at the input size");
  }

  const size_t convs_per_block =
      family == HeadFamily::resnet_basic || family == HeadFamily::hourglass ? 2
                                                                            : 3;
  int prev_spatial = 0;
  for (size_t i = 1; i < block_end; ++i) {
    const BlockRow& r = rows[i];
    if (r.repeat < 1) throw std::invalid_argument("block repeat must be >= 1");
    if (r.channels.size() != convs_per_block)
      throw std::invalid_argument(
          "block rows of this family need " + std::to_string(convs_per_block) +
          " channel entries");
    for (int c : r.channels)
      if (c < 1) throw std::invalid_argument("bad channel count");
    if (family == HeadFamily::hourglass) {
      if (i == 1) {
        if (r.spatial != s)
          throw std::invalid_argument(
              "hourglass blocks must start at the input size");
      } else if (r.spatial * 2 != prev_spatial) {
        throw std::invalid_argument(
            "hourglass block sizes must halve row to row (input size not "
            "divisible by the downsampling schedule)");
      }
      prev_spatial = r.spatial;
    } else if (r.spatial != s) {
      throw std::invalid_argument("resnet blocks must stay at the input size");
    }
  }

  if (ablations.dilated_layer_count < 0 ||
      ablations.dilated_layer_count > dilatable_conv_count(*this))
    throw std::invalid_argument("dilated layer count exceeds the conv total");
  if (family != HeadFamily::hourglass &&
      (ablations.no_long_range_skips || ablations.no_encoder_decoder))
    throw std::invalid_argument(
        "encoder-decoder ablations apply to hourglass heads only");
}

int dilatable_conv_count(const MaskHeadSpec& spec) {
  if (spec.family == HeadFamily::fully_connected) return 0;
  // 3x3 convs inside residual blocks; stem / final / output / projections
  // keep rate 1
  const int per_block =
      spec.family == HeadFamily::resnet_basic ||
              spec.family == HeadFamily::hourglass
          ? 2
          : 1;
  const size_t block_end = spec.family == HeadFamily::hourglass
                               ? spec.rows.size() - 1
                               : spec.rows.size();
  int total = 0;
  for (size_t i = 1; i < block_end; ++i) total += spec.rows[i].repeat * per_block;
  return total;
}

MaskHeadSpec dilate_layers(const MaskHeadSpec& spec, int count) {
  if (count < 0 || count > dilatable_conv_count(spec))
    throw std::invalid_argument("dilate_layers: count exceeds the conv total");
  MaskHeadSpec out = spec;
  out.ablations.dilated_layer_count = count;
  return out;
}

// ---------------------------------------------------------------------------
// serialization

std::string write_mask_head_spec(const MaskHeadSpec& spec) {
  std::ostringstream os;
  os << "family " << head_family_name(spec.family) << "\n";
  os << "named_depth " << spec.named_depth << "\n";
  os << "output_channels " << spec.output_channels << "\n";
  os << "ablations no_long_range_skips=" << (spec.ablations.no_long_range_skips ? 1 : 0)
     << " no_encoder_decoder=" << (spec.ablations.no_encoder_decoder ? 1 : 0)
     << " dilated_layers=" << spec.ablations.dilated_layer_count << "\n";
  if (spec.family == HeadFamily::fully_connected) {
    os << "fc_hidden_width " << spec.fc_hidden_width << "\n";
    os << "fc_size " << spec.fc_size << "\n";
  }
  for (const BlockRow& r : spec.rows) {
    os << "row " << r.repeat << " " << r.spatial << " ";
    for (size_t i = 0; i < r.channels.size(); ++i)
      os << (i ? "," : "") << r.channels[i];
    os << "\n";
  }
  return os.str();
}

MaskHeadSpec parse_mask_head_spec(const std::string& text) {
  MaskHeadSpec spec;
  std::istringstream is(text);
  std::string line;
  bool saw_family = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    const auto fail = [&](const std::string& why) {
      throw std::runtime_error("head spec line " + std::to_string(lineno) +
                               ": " + why);
    };
    if (key == "family") {
      std::string name;
      if (!(ls >> name)) fail("missing family name");
      spec.family = head_family_from_name(name);
      saw_family = true;
    } else if (key == "named_depth") {
      if (!(ls >> spec.named_depth)) fail("bad named_depth");
    } else if (key == "output_channels") {
      if (!(ls >> spec.output_channels)) fail("bad output_channels");
    } else if (key == "fc_hidden_width") {
      if (!(ls >> spec.fc_hidden_width)) fail("bad fc_hidden_width");
    } else if (key == "fc_size") {
      if (!(ls >> spec.fc_size)) fail("bad fc_size");
    } else if (key == "ablations") {
      std::string tok;
      while (ls >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) fail("bad ablation token '" + tok + "'");
        const std::string name = tok.substr(0, eq);
        const int value = std::stoi(tok.substr(eq + 1));
        if (name == "no_long_range_skips")
          spec.ablations.no_long_range_skips = value != 0;
        else if (name == "no_encoder_decoder")
          spec.ablations.no_encoder_decoder = value != 0;
        else if (name == "dilated_layers")
          spec.ablations.dilated_layer_count = value;
        else
          fail("unknown ablation '" + name + "'");
      }
    } else if (key == "row") {
      BlockRow r;
      std::string channels;
      if (!(ls >> r.repeat >> r.spatial >> channels)) fail("bad row");
      r.channels.clear();
      std::istringstream cs(channels);
      std::string item;
      while (std::getline(cs, item, ',')) r.channels.push_back(std::stoi(item));
      if (r.channels.empty()) fail("row without channels");
      spec.rows.push_back(std::move(r));
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!saw_family) throw std::runtime_error("head spec: missing family line");
  spec.validate();
  return spec;
}

MaskHeadSpec load_mask_head_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open head spec '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return parse_mask_head_spec(os.str());
}

void save_mask_head_spec(const MaskHeadSpec& spec, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write head spec '" + path + "'");
  f << write_mask_head_spec(spec);
}

// ---------------------------------------------------------------------------
// builder

namespace {

class HeadBuilder {
 public:
  HeadBuilder(const MaskHeadSpec& spec, int input_channels, uint64_t seed)
      : base_rng_(seed), dilated_left_(spec.ablations.dilated_layer_count) {
    net_.spec = spec;
    net_.input_channels = input_channels;
    net_.input_size = spec.input_size();
    cur_channels_ = input_channels;
    cur_spatial_ = net_.input_size;
  }

  MaskHeadNetwork take() { return std::move(net_); }

  int tail() const { return cur_; }
  int channels() const { return cur_channels_; }
  int spatial() const { return cur_spatial_; }

  uint64_t layer_seed() { return base_rng_.fork(net_.layers.size()).seed(); }

  int push(MaskHeadNetwork::Layer l) {
    net_.layers.push_back(std::move(l));
    cur_ = (int)net_.layers.size() - 1;
    return cur_;
  }

  int conv(int k, int cout, HeadLayerRole role, HeadLayerKind kind,
           bool dilatable, bool with_bias) {
    int dilation = 1;
    if (dilatable && k == 3 && dilated_left_ > 0) {
      dilation = 2;
      --dilated_left_;
    }
    MaskHeadNetwork::Layer l;
    l.kind = kind;
    l.role = role;
    l.input = cur_;
    l.spatial = cur_spatial_;
    l.cin = cur_channels_;
    l.cout = cout;
    l.dilation = dilation;
    l.conv = make_conv(k, k, cur_channels_, cout, 1, dilation, Padding::same,
                       with_bias, Init::he_normal, layer_seed());
    const int idx = push(std::move(l));
    cur_channels_ = cout;
    return idx;
  }

  int norm() {
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::norm;
    l.input = cur_;
    l.spatial = cur_spatial_;
    l.cin = l.cout = cur_channels_;
    l.norm = make_batch_norm(cur_channels_);
    return push(std::move(l));
  }

  int act() {
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::act;
    l.input = cur_;
    l.spatial = cur_spatial_;
    l.cin = l.cout = cur_channels_;
    return push(std::move(l));
  }

  void conv_norm_act(int k, int cout, HeadLayerRole role, bool dilatable) {
    conv(k, cout, role, HeadLayerKind::conv, dilatable, false);
    norm();
    act();
  }

  int down() {
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::down;
    l.input = cur_;
    l.cin = l.cout = cur_channels_;
    cur_spatial_ /= 2;
    l.spatial = cur_spatial_;
    return push(std::move(l));
  }

  int up() {
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::up;
    l.input = cur_;
    l.cin = l.cout = cur_channels_;
    cur_spatial_ *= 2;
    l.spatial = cur_spatial_;
    return push(std::move(l));
  }

  int add_join(int other) {
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::add;
    l.input = cur_;
    l.input2 = other;
    l.spatial = cur_spatial_;
    l.cin = l.cout = cur_channels_;
    return push(std::move(l));
  }

  // 1x1 adapter used on shortcut paths and up transitions
  int projection(int from, int from_channels, int to_channels) {
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::proj;
    l.input = from;
    l.spatial = cur_spatial_;
    l.cin = from_channels;
    l.cout = to_channels;
    l.conv = make_conv(1, 1, from_channels, to_channels, 1, 1, Padding::same,
                       false, Init::he_normal, layer_seed());
    const int conv_idx = push(std::move(l));
    MaskHeadNetwork::Layer nl;
    nl.kind = HeadLayerKind::norm;
    nl.input = conv_idx;
    nl.spatial = cur_spatial_;
    nl.cin = nl.cout = to_channels;
    nl.norm = make_batch_norm(to_channels);
    const int idx = push(std::move(nl));
    cur_channels_ = to_channels;
    return idx;
  }

  void residual_block(const std::vector<int>& ch) {
    const int block_in = cur_;
    const int block_in_channels = cur_channels_;
    if (ch.size() == 2) {
      conv(3, ch[0], HeadLayerRole::block, HeadLayerKind::conv, true, false);
      norm();
      act();
      conv(3, ch[1], HeadLayerRole::block, HeadLayerKind::conv, true, false);
      norm();
    } else {
      conv(1, ch[0], HeadLayerRole::block, HeadLayerKind::conv, false, false);
      norm();
      act();
      conv(3, ch[1], HeadLayerRole::block, HeadLayerKind::conv, true, false);
      norm();
      act();
      conv(1, ch[2], HeadLayerRole::block, HeadLayerKind::conv, false, false);
      norm();
    }
    const int main_out = cur_;
    int skip = block_in;
    if (block_in_channels != cur_channels_) {
      skip = projection(block_in, block_in_channels, cur_channels_);
      // projection() moved cur_; restore the main path as the join input
    }
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::add;
    l.input = main_out;
    l.input2 = skip;
    l.spatial = cur_spatial_;
    l.cin = l.cout = cur_channels_;
    push(std::move(l));
    act();
  }

 private:
  MaskHeadNetwork net_;
  Rng base_rng_;
  int dilated_left_ = 0;
  int cur_ = -1;
  int cur_channels_ = 0;
  int cur_spatial_ = 0;
};

MaskHeadNetwork build_conv_head(const MaskHeadSpec& spec, int input_channels,
                                uint64_t seed) {
  HeadBuilder b(spec, input_channels, seed);
  b.conv_norm_act(3, spec.rows.front().channels[0], HeadLayerRole::stem, false);

  if (spec.family != HeadFamily::hourglass) {
    for (size_t i = 1; i < spec.rows.size(); ++i)
      for (int r = 0; r < spec.rows[i].repeat; ++r)
        b.residual_block(spec.rows[i].channels);
  } else {
    const bool no_ed = spec.ablations.no_encoder_decoder;
    const bool no_lrs = spec.ablations.no_long_range_skips;
    const std::vector<BlockRow> mid(spec.rows.begin() + 1, spec.rows.end() - 1);
    const int m = (int)mid.size();
    std::vector<int> taps(m, -1);

    // encoder: first ceil(r/2) blocks of each outer row, then descend;
    // the innermost row keeps all of its blocks at the bottleneck
    for (int i = 0; i < m; ++i) {
      const int blocks =
          i == m - 1 ? mid[i].repeat : (mid[i].repeat + 1) / 2;
      for (int r = 0; r < blocks; ++r) b.residual_block(mid[i].channels);
      if (i < m - 1) {
        taps[i] = b.tail();
        if (!no_ed) b.down();
      }
    }
    // decoder: ascend, joining the encoder tap of equal size, then the
    // remaining floor(r/2) blocks of that row
    for (int i = m - 2; i >= 0; --i) {
      if (!no_ed) b.up();
      const int want = mid[i].channels.back();
      if (b.channels() != want) b.projection(b.tail(), b.channels(), want);
      if (!no_lrs) b.add_join(taps[i]);
      for (int r = 0; r < mid[i].repeat / 2; ++r)
        b.residual_block(mid[i].channels);
    }

    b.conv_norm_act(3, spec.rows.back().channels[0], HeadLayerRole::final_conv,
                    false);
  }

  b.conv(1, spec.output_channels, HeadLayerRole::output, HeadLayerKind::conv,
         false, true);
  return b.take();
}

}  // namespace

MaskHeadNetwork build_mask_head(const MaskHeadSpec& spec, int input_channels,
                                uint64_t seed) {
  spec.validate();
  if (input_channels < 1)
    throw std::invalid_argument("build_mask_head: input_channels must be > 0");
  if (spec.family == HeadFamily::fully_connected)
    return build_fc_head(spec.named_depth, spec.fc_hidden_width, spec.fc_size,
                         input_channels, seed);
  return build_conv_head(spec, input_channels, seed);
}

MaskHeadNetwork build_fc_head(int layers, int hidden_width, int out_size,
                              int input_channels, uint64_t seed) {
  if (layers < 1) throw std::invalid_argument("build_fc_head: layers >= 1");
  MaskHeadSpec spec;
  spec.family = HeadFamily::fully_connected;
  spec.named_depth = layers;
  spec.fc_hidden_width = hidden_width;
  spec.fc_size = out_size;
  spec.validate();

  MaskHeadNetwork net;
  net.spec = spec;
  net.input_channels = input_channels;
  net.input_size = out_size;

  Rng rng(seed);
  const int flat_in = out_size * out_size * input_channels;

  MaskHeadNetwork::Layer fl;
  fl.kind = HeadLayerKind::flatten;
  fl.input = -1;
  fl.cin = input_channels;
  fl.cout = flat_in;
  net.layers.push_back(std::move(fl));

  int d_in = flat_in;
  for (int i = 0; i < layers; ++i) {
    const bool last = i == layers - 1;
    const int d_out = last ? out_size * out_size : hidden_width;
    MaskHeadNetwork::Layer l;
    l.kind = HeadLayerKind::fc;
    l.role = last ? HeadLayerRole::output : HeadLayerRole::none;
    l.input = (int)net.layers.size() - 1;
    l.cin = d_in;
    l.cout = d_out;
    l.fc = make_fc(d_in, d_out, Init::glorot_normal,
                   rng.fork(net.layers.size()).seed());
    net.layers.push_back(std::move(l));
    if (!last) {
      MaskHeadNetwork::Layer a;
      a.kind = HeadLayerKind::act;
      a.input = (int)net.layers.size() - 1;
      a.cin = a.cout = d_out;
      net.layers.push_back(std::move(a));
    }
    d_in = d_out;
  }

  MaskHeadNetwork::Layer rs;
  rs.kind = HeadLayerKind::reshape;
  rs.input = (int)net.layers.size() - 1;
  rs.spatial = out_size;
  rs.cin = out_size * out_size;
  rs.cout = 1;
  net.layers.push_back(std::move(rs));
  return net;
}

Tensor MaskHeadNetwork::forward(const Tensor& x, Phase phase) {
  if (x.rank() != 4)
    throw std::invalid_argument("mask head input must be [N,S,S,C]");
  if (x.dim(1) != input_size || x.dim(2) != input_size)
    throw std::invalid_argument(
        "mask head input spatial size " + std::to_string(x.dim(1)) +
        " does not match the spec size " + std::to_string(input_size));
  if (x.dim(3) != input_channels)
    throw std::invalid_argument("mask head input channels " +
                                std::to_string(x.dim(3)) + " != " +
                                std::to_string(input_channels));
  const int n = x.dim(0);
  std::vector<Tensor> outs(layers.size());
  auto at = [&](int idx) -> const Tensor& { return idx < 0 ? x : outs[idx]; };
  for (size_t i = 0; i < layers.size(); ++i) {
    Layer& l = layers[i];
    switch (l.kind) {
      case HeadLayerKind::conv:
      case HeadLayerKind::proj:
        outs[i] = l.conv.forward(at(l.input));
        break;
      case HeadLayerKind::norm:
        outs[i] = l.norm.forward(at(l.input), phase);
        break;
      case HeadLayerKind::act:
        outs[i] = relu(at(l.input));
        break;
      case HeadLayerKind::down:
        outs[i] = down2(at(l.input));
        break;
      case HeadLayerKind::up:
        outs[i] = up2(at(l.input));
        break;
      case HeadLayerKind::add:
        outs[i] = add(at(l.input), at(l.input2));
        break;
      case HeadLayerKind::flatten:
        outs[i] = reshape(at(l.input),
                          {n, input_size * input_size * input_channels});
        break;
      case HeadLayerKind::fc:
        outs[i] = l.fc.forward(at(l.input));
        break;
      case HeadLayerKind::reshape:
        outs[i] = reshape(at(l.input), {n, input_size, input_size, 1});
        break;
    }
  }
  return outs.back();
}

std::vector<std::pair<std::string, Tensor>> MaskHeadNetwork::parameters() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < layers.size(); ++i) {
    Layer& l = layers[i];
    const std::string p = "layer" + std::to_string(i);
    switch (l.kind) {
      case HeadLayerKind::conv:
      case HeadLayerKind::proj:
        out.emplace_back(p + ".kernel", l.conv.kernel);
        if (l.conv.bias.defined()) out.emplace_back(p + ".bias", l.conv.bias);
        break;
      case HeadLayerKind::norm:
        out.emplace_back(p + ".gamma", l.norm.gamma);
        out.emplace_back(p + ".beta", l.norm.beta);
        break;
      case HeadLayerKind::fc:
        out.emplace_back(p + ".weight", l.fc.weight);
        out.emplace_back(p + ".bias", l.fc.bias);
        break;
      default:
        break;
    }
  }
  return out;
}

std::vector<std::pair<std::string, BatchNormState*>>
MaskHeadNetwork::norm_states() {
  std::vector<std::pair<std::string, BatchNormState*>> out;
  for (size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == HeadLayerKind::norm)
      out.emplace_back("layer" + std::to_string(i), &layers[i].norm.state);
  }
  return out;
}

std::vector<LayerInfo> layer_inventory(const MaskHeadNetwork& net) {
  std::vector<LayerInfo> out;
  out.reserve(net.layers.size());
  for (const auto& l : net.layers) {
    LayerInfo info;
    info.kind = l.kind;
    info.role = l.role;
    info.spatial = l.spatial;
    info.cin = l.cin;
    info.cout = l.cout;
    info.dilation = l.dilation;
    if ((l.kind == HeadLayerKind::conv || l.kind == HeadLayerKind::proj) &&
        l.conv.kernel.defined())
      info.ksize = l.conv.kernel.dim(0);
    out.push_back(info);
  }
  return out;
}

int64_t count_parameters(MaskHeadNetwork& net) {
  int64_t total = 0;
  for (auto& [name, t] : net.parameters()) total += t.numel();
  return total;
}

}  // namespace ctseg
