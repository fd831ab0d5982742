#pragma once

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>

#include "condisr/gate.hpp"
#include "condisr/nn.hpp"

namespace condisr {

struct ModelConfig {
  std::string kind = "small-cnn";  // small-cnn | resnet18
  long stem_channels = 64;
  long proj_dim = 128;
  long proj_hidden = 0;  // 0: single affine projection
  double tau = 0.1;
  std::string pretrained_path;
  bool stopgrad_cls = false;  // stop classification gradients into theta
  long input_hw = 96;

  long decoder_resolution = 48;
  std::vector<long> decoder_widths = {16};
  long decoder_pool_stages = 0;

  std::string plugin_kind = "none";
  double plugin_p = 0.5;
  double plugin_alpha = 0.1;
};

template <typename T>
using Trace = std::vector<std::pair<std::string, Var<T>>>;

// ---------------------------------------------------------------------------
// Style plugins (feature-statistics augmentation), pluggable by name so that
// external variants can register themselves.
// ---------------------------------------------------------------------------

template <typename T>
class StylePlugin {
 public:
  virtual ~StylePlugin() = default;
  virtual Var<T> apply(Ctx<T>& ctx, Var<T> x) = 0;
  virtual std::string kind() const = 0;
};

template <typename T>
class MixStyle : public StylePlugin<T> {
 public:
  MixStyle(double p, double alpha) : p_(p), alpha_(alpha) {}
  std::string kind() const override { return "mixstyle"; }

  Var<T> apply(Ctx<T>& ctx, Var<T> x) override {
    if (!ctx.training || ctx.rng == nullptr) return x;
    long n = ctx.tape.val(x).n();
    if (n < 2) {
      if (!notified_) {
        std::fprintf(stderr, "[mixstyle] batch of one, passing through unchanged\n");
        notified_ = true;
      }
      return x;
    }
    if (!ctx.rng->bernoulli(p_)) return x;
    std::vector<T> lambda(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) lambda[i] = static_cast<T>(ctx.rng->beta(alpha_, alpha_));
    std::vector<int> perm = ctx.rng->permutation(static_cast<int>(n));
    return mixstyle_op(ctx.tape, x, perm, lambda);
  }

 private:
  double p_, alpha_;
  bool notified_ = false;
};

template <typename T>
class Dsu : public StylePlugin<T> {
 public:
  explicit Dsu(double p) : p_(p) {}
  std::string kind() const override { return "dsu"; }

  Var<T> apply(Ctx<T>& ctx, Var<T> x) override {
    if (!ctx.training || ctx.rng == nullptr) return x;
    long n = ctx.tape.val(x).n(), c = ctx.tape.val(x).c();
    if (n < 2) {
      if (!notified_) {
        std::fprintf(stderr, "[dsu] batch of one, passing through unchanged\n");
        notified_ = true;
      }
      return x;
    }
    if (!ctx.rng->bernoulli(p_)) return x;
    Tensor<T> eps_mu({n, c}), eps_sig({n, c});
    for (long i = 0; i < n * c; ++i) eps_mu[i] = static_cast<T>(ctx.rng->normal());
    for (long i = 0; i < n * c; ++i) eps_sig[i] = static_cast<T>(ctx.rng->normal());
    return dsu_op(ctx.tape, x, eps_mu, eps_sig);
  }

 private:
  double p_;
  bool notified_ = false;
};

template <typename T>
using PluginFactory =
    std::function<std::unique_ptr<StylePlugin<T>>(double p, double alpha)>;

template <typename T>
std::map<std::string, PluginFactory<T>>& style_plugin_registry() {
  static std::map<std::string, PluginFactory<T>> reg = {
      {"mixstyle",
       [](double p, double alpha) { return std::make_unique<MixStyle<T>>(p, alpha); }},
      {"dsu", [](double p, double) { return std::make_unique<Dsu<T>>(p); }},
  };
  return reg;
}

template <typename T>
void register_style_plugin(const std::string& name, PluginFactory<T> factory) {
  style_plugin_registry<T>()[name] = std::move(factory);
}

template <typename T>
std::unique_ptr<StylePlugin<T>> make_style_plugin(const std::string& kind, double p, double alpha) {
  if (kind == "none" || kind.empty()) return nullptr;
  auto& reg = style_plugin_registry<T>();
  auto it = reg.find(kind);
  if (it == reg.end()) throw std::invalid_argument("unknown style plugin: " + kind);
  return it->second(p, alpha);
}

// ---------------------------------------------------------------------------
// Backbones
// ---------------------------------------------------------------------------

/// conv1(k1,stride)-bn-relu -> conv2(3x3)-bn, plus projection shortcut when
/// the shape changes; relu after the sum.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, shortcut;
  BatchNorm2d<T> bn1, bn2, bn_sc;
  bool projected = false;

  void init(const std::string& name, long in, long mid, long out, long stride, long k1, Rng& rng) {
    conv1.init(name + ".conv1", in, mid, k1, stride, k1 / 2, false, rng);
    bn1.init(name + ".bn1", mid);
    conv2.init(name + ".conv2", mid, out, 3, 1, 1, false, rng);
    bn2.init(name + ".bn2", out);
    projected = (in != out) || (stride != 1);
    if (projected) {
      shortcut.init(name + ".short", in, out, 1, stride, 0, false, rng);
      bn_sc.init(name + ".bn_short", out);
    }
  }
  Var<T> forward(Ctx<T>& ctx, Var<T> x) {
    Var<T> h = bn1.forward(ctx, conv1.forward(ctx, x), true);
    h = bn2.forward(ctx, conv2.forward(ctx, h), false);
    Var<T> sc = projected ? bn_sc.forward(ctx, shortcut.forward(ctx, x), false) : x;
    return relu(ctx.tape, add(ctx.tape, h, sc));
  }
  void collect(ParamSet<T>& ps) {
    conv1.collect(ps);
    bn1.collect(ps);
    conv2.collect(ps);
    bn2.collect(ps);
    if (projected) {
      shortcut.collect(ps);
      bn_sc.collect(ps);
    }
  }
};

template <typename T>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Var<T> stem(Ctx<T>& ctx, Var<T> x) = 0;
  virtual Var<T> body(Ctx<T>& ctx, Var<T> f, StylePlugin<T>* plugin, Trace<T>* trace) = 0;
  virtual long stem_channels() const = 0;
  virtual void collect(ParamSet<T>& ps) = 0;
  virtual std::vector<std::string> layer_names() const = 0;
};

struct SmallCnnSpec {
  long stem_channels = 64;
  long pool_after_stem = 4;
  std::array<long, 3> mids{16, 48, 48};
  std::array<long, 3> outs{32, 48, 48};
  std::array<long, 3> strides{2, 2, 1};
  std::array<long, 3> conv1_k{1, 3, 3};
};

/// Compact residual classifier for desk-scale runs: stride-2 stem at the
/// configured channel count, three residual blocks, global pool, affine head.
template <typename T>
class SmallCnn : public Backbone<T> {
 public:
  SmallCnn(const SmallCnnSpec& spec, Rng& rng) : spec_(spec) {
    stem_conv_.init("stem.conv", 3, spec.stem_channels, 3, 2, 1, false, rng);
    stem_bn_.init("stem.bn", spec.stem_channels);
    long in = spec.stem_channels;
    for (int i = 0; i < 3; ++i) {
      blocks_[i].init("block" + std::to_string(i + 1), in, spec.mids[i], spec.outs[i],
                      spec.strides[i], spec.conv1_k[i], rng);
      in = spec.outs[i];
    }
    fc_.init("head.fc", in, 1, rng);
  }

  Var<T> stem(Ctx<T>& ctx, Var<T> x) override {
    return stem_bn_.forward(ctx, stem_conv_.forward(ctx, x), true);
  }

  Var<T> body(Ctx<T>& ctx, Var<T> f, StylePlugin<T>* plugin, Trace<T>* trace) override {
    Var<T> h = spec_.pool_after_stem > 1 ? avgpool(ctx.tape, f, spec_.pool_after_stem) : f;
    for (int i = 0; i < 3; ++i) {
      h = blocks_[i].forward(ctx, h);
      if (trace) trace->emplace_back("block" + std::to_string(i + 1), h);
      if (plugin && i < 2) h = plugin->apply(ctx, h);
    }
    return fc_.forward(ctx, global_avgpool(ctx.tape, h));
  }

  long stem_channels() const override { return spec_.stem_channels; }
  void collect(ParamSet<T>& ps) override {
    stem_conv_.collect(ps);
    stem_bn_.collect(ps);
    for (auto& b : blocks_) b.collect(ps);
    fc_.collect(ps);
  }
  std::vector<std::string> layer_names() const override {
    return {"stem", "block1", "block2", "block3"};
  }

 private:
  SmallCnnSpec spec_;
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  std::array<ResidualBlock<T>, 3> blocks_;
  LinearLayer<T> fc_;
};

/// Standard ResNet18 with a scalar head. The stem is the stride-2 7x7
/// convolution (plus bn/relu); max-pooling belongs to the body so the gate
/// sees the full 48x48 feature map on 96x96 inputs.
template <typename T>
class ResNet18 : public Backbone<T> {
 public:
  explicit ResNet18(Rng& rng) {
    stem_conv_.init("stem.conv", 3, 64, 7, 2, 3, false, rng);
    stem_bn_.init("stem.bn", 64);
    const long widths[4] = {64, 128, 256, 512};
    long in = 64;
    for (int l = 0; l < 4; ++l) {
      long stride = l == 0 ? 1 : 2;
      blocks_[2 * l].init("layer" + std::to_string(l + 1) + ".0", in, widths[l], widths[l],
                          stride, 3, rng);
      blocks_[2 * l + 1].init("layer" + std::to_string(l + 1) + ".1", widths[l], widths[l],
                              widths[l], 1, 3, rng);
      in = widths[l];
    }
    fc_.init("head.fc", 512, 1, rng);
  }

  Var<T> stem(Ctx<T>& ctx, Var<T> x) override {
    return stem_bn_.forward(ctx, stem_conv_.forward(ctx, x), true);
  }

  Var<T> body(Ctx<T>& ctx, Var<T> f, StylePlugin<T>* plugin, Trace<T>* trace) override {
    Var<T> h = maxpool(ctx.tape, f, 3, 2, 1);
    for (int l = 0; l < 4; ++l) {
      h = blocks_[2 * l].forward(ctx, h);
      h = blocks_[2 * l + 1].forward(ctx, h);
      if (trace) trace->emplace_back("layer" + std::to_string(l + 1), h);
      if (plugin && l < 2) h = plugin->apply(ctx, h);
    }
    return fc_.forward(ctx, global_avgpool(ctx.tape, h));
  }

  long stem_channels() const override { return 64; }
  void collect(ParamSet<T>& ps) override {
    stem_conv_.collect(ps);
    stem_bn_.collect(ps);
    for (auto& b : blocks_) b.collect(ps);
    fc_.collect(ps);
  }
  std::vector<std::string> layer_names() const override {
    return {"stem", "layer1", "layer2", "layer3", "layer4"};
  }

 private:
  Conv2d<T> stem_conv_;
  BatchNorm2d<T> stem_bn_;
  std::array<ResidualBlock<T>, 8> blocks_;
  LinearLayer<T> fc_;
};

// ---------------------------------------------------------------------------
// Reconstruction decoder
// ---------------------------------------------------------------------------

/// 1x1 reduction followed by conv/upsample stages from the stem's spatial
/// size to the target resolution, final 1x1 projection to image channels.
/// `pool_stages` prepends parameter-free average-pooling stages (declared
/// capacity knob; the spatial path down/up must relate by powers of two).
template <typename T>
class Decoder {
 public:
  void init(long in_channels, long stem_hw, long target, std::vector<long> widths,
            long pool_stages, Rng& rng) {
    target_ = target;
    if (target < 1) throw std::invalid_argument("decoder: target resolution must be >= 1");
    long cur = stem_hw;
    pools_ = 0;
    for (long i = 0; i < pool_stages && cur / 2 >= 1; ++i) {
      cur /= 2;
      ++pools_;
    }
    while (cur > target) {
      if (cur % 2 != 0)
        throw std::invalid_argument("decoder: stem size and target resolution incompatible");
      cur /= 2;
      ++pools_;
    }
    long ups = 0;
    long probe = cur;
    while (probe < target) {
      probe *= 2;
      ++ups;
    }
    if (probe != target)
      throw std::invalid_argument("decoder: target resolution not reachable by 2x stages");
    if (widths.empty()) widths = {16};
    auto width_at = [&](long i) {
      return widths[std::min<std::size_t>(static_cast<std::size_t>(i), widths.size() - 1)];
    };
    reduce_.init("decoder.reduce", in_channels, width_at(0), 1, 1, 0, true, rng);
    long n_convs = std::max<long>(1, ups);
    stage_convs_.resize(static_cast<std::size_t>(n_convs));
    long w_in = width_at(0);
    for (long i = 0; i < n_convs; ++i) {
      long w_out = width_at(i + 1);
      stage_convs_[static_cast<std::size_t>(i)].init("decoder.stage" + std::to_string(i), w_in,
                                                     w_out, 3, 1, 1, true, rng);
      w_in = w_out;
    }
    ups_ = ups;
    final_.init("decoder.out", w_in, 3, 1, 1, 0, true, rng);
  }

  long target_resolution() const { return target_; }

  Var<T> forward(Ctx<T>& ctx, Var<T> f_sty) {
    Var<T> h = f_sty;
    for (long i = 0; i < pools_; ++i) h = avgpool(ctx.tape, h, 2);
    h = relu(ctx.tape, reduce_.forward(ctx, h));
    if (ups_ == 0) {
      h = relu(ctx.tape, stage_convs_[0].forward(ctx, h));
    } else {
      for (long i = 0; i < ups_; ++i) {
        h = relu(ctx.tape, stage_convs_[static_cast<std::size_t>(i)].forward(ctx, h));
        h = upsample_nearest2(ctx.tape, h);
      }
    }
    Var<T> out = final_.forward(ctx, h);
    const Tensor<T>& ov = ctx.tape.val(out);
    if (ov.h() != target_ || ov.w() != target_)
      throw std::runtime_error("decoder: output is not the configured resolution");
    return out;
  }

  void collect(ParamSet<T>& ps) {
    reduce_.collect(ps);
    for (auto& c : stage_convs_) c.collect(ps);
    final_.collect(ps);
  }

 private:
  long target_ = 48;
  long pools_ = 0;
  long ups_ = 0;
  Conv2d<T> reduce_;
  std::vector<Conv2d<T>> stage_convs_;
  Conv2d<T> final_;
};

// ---------------------------------------------------------------------------
// Full network bundle
// ---------------------------------------------------------------------------

template <typename T>
struct Network {
  ModelConfig cfg;
  std::unique_ptr<Backbone<T>> backbone;
  ChannelGate<T> gate;
  ProjectionHead<T> proj;
  Decoder<T> decoder;
  std::unique_ptr<StylePlugin<T>> plugin;
  bool has_gate = false;
  bool has_proj = false;
  bool has_decoder = false;

  ParamSet<T> params() {
    ParamSet<T> ps;
    backbone->collect(ps);
    if (has_gate) gate.collect(ps);
    if (has_proj) proj.collect(ps);
    if (has_decoder) decoder.collect(ps);
    return ps;
  }

  std::vector<std::string> layer_names() const { return backbone->layer_names(); }
};

inline SmallCnnSpec small_cnn_spec_for(long stem_channels) {
  SmallCnnSpec spec;
  spec.stem_channels = stem_channels;
  if (stem_channels <= 8) {  // tiny configuration used by gradient checks
    spec.pool_after_stem = 1;
    spec.mids = {4, 4, 4};
    spec.outs = {4, 4, 4};
    spec.strides = {1, 1, 1};
    spec.conv1_k = {3, 3, 3};
  }
  return spec;
}

template <typename T>
Network<T> build_network(const ModelConfig& cfg, bool with_gate, bool with_decoder,
                         std::uint64_t init_seed) {
  Rng rng = Rng::derive(init_seed, {0x1217});
  Network<T> net;
  net.cfg = cfg;
  if (cfg.kind == "small-cnn") {
    net.backbone = std::make_unique<SmallCnn<T>>(small_cnn_spec_for(cfg.stem_channels), rng);
  } else if (cfg.kind == "resnet18") {
    if (cfg.stem_channels != 64)
      throw std::invalid_argument("resnet18 requires model.stem_channels = 64");
    net.backbone = std::make_unique<ResNet18<T>>(rng);
  } else {
    throw std::invalid_argument("unknown model kind: " + cfg.kind);
  }
  net.has_gate = with_gate;
  net.has_proj = with_gate;
  net.has_decoder = with_decoder;
  if (with_gate) {
    net.gate.init("gate", cfg.stem_channels, static_cast<T>(cfg.tau));
    net.proj.init("proj", cfg.stem_channels, cfg.proj_dim, cfg.proj_hidden, rng);
  }
  if (with_decoder) {
    long stem_hw = cfg.input_hw / 2;
    net.decoder.init(cfg.stem_channels, stem_hw, cfg.decoder_resolution, cfg.decoder_widths,
                     cfg.decoder_pool_stages, rng);
  }
  net.plugin = make_style_plugin<T>(cfg.plugin_kind, cfg.plugin_p, cfg.plugin_alpha);
  return net;
}

// ---------------------------------------------------------------------------
// Checkpoint format: "CDSR" magic, version, then (name, dims, float32 data)
// entries, all little-endian. Parameters and buffers share the namespace.
// ---------------------------------------------------------------------------

namespace detail_io {
inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

template <typename T>
void write_entry(std::ostream& os, const std::string& name, const Tensor<T>& t) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (int d = 0; d < t.ndim(); ++d) write_u64(os, static_cast<std::uint64_t>(t.dim(d)));
  std::vector<float> buf(static_cast<std::size_t>(t.numel()));
  for (long i = 0; i < t.numel(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(t[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
}
}  // namespace detail_io

template <typename T>
void save_checkpoint(const std::string& path, ParamSet<T>& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write("CDSR", 4);
  detail_io::write_u32(os, 1);
  detail_io::write_u32(os, static_cast<std::uint32_t>(ps.params.size() + ps.buffers.size()));
  for (auto* p : ps.params) detail_io::write_entry(os, p->name, p->value);
  for (auto* b : ps.buffers) detail_io::write_entry(os, b->name, b->value);
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

/// Reads every entry of a checkpoint file into (name -> tensor) form.
inline std::map<std::string, Tensor<float>> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "CDSR")
    throw std::runtime_error("not a checkpoint file: " + path);
  std::uint32_t version = detail_io::read_u32(is);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  std::uint32_t count = detail_io::read_u32(is);
  std::map<std::string, Tensor<float>> out;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::uint32_t name_len = detail_io::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    std::uint32_t ndim = detail_io::read_u32(is);
    std::vector<long> dims(ndim);
    for (auto& d : dims) d = static_cast<long>(detail_io::read_u64(is));
    Tensor<float> t(dims);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

/// Strict restore: every parameter and buffer must be present with the
/// right shape.
template <typename T>
void load_checkpoint(const std::string& path, ParamSet<T>& ps) {
  auto entries = read_checkpoint(path);
  auto apply = [&](const std::string& name, Tensor<T>& dst) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("checkpoint missing tensor: " + name);
    if (it->second.dims() != dst.dims())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    for (long i = 0; i < dst.numel(); ++i) dst[i] = static_cast<T>(it->second[i]);
  };
  for (auto* p : ps.params) apply(p->name, p->value);
  for (auto* b : ps.buffers) apply(b->name, b->value);
}

/// Lenient load for externally supplied weights: copies entries whose names
/// and shapes match, returns how many tensors were loaded.
template <typename T>
long load_pretrained(const std::string& path, ParamSet<T>& ps) {
  auto entries = read_checkpoint(path);
  long loaded = 0;
  auto apply = [&](const std::string& name, Tensor<T>& dst) {
    auto it = entries.find(name);
    if (it == entries.end()) return;
    if (it->second.dims() != dst.dims())
      throw std::runtime_error("pretrained shape mismatch for " + name);
    for (long i = 0; i < dst.numel(); ++i) dst[i] = static_cast<T>(it->second[i]);
    ++loaded;
  };
  for (auto* p : ps.params) apply(p->name, p->value);
  for (auto* b : ps.buffers) apply(b->name, b->value);
  if (loaded == 0) throw std::runtime_error("pretrained file matched no tensors: " + path);
  return loaded;
}

}  // namespace condisr
