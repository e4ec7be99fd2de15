#include "ugsr/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace ugsr {

namespace {

constexpr char kMagic[9] = "UGSRCKPT";
constexpr std::uint32_t kVersion = 1;

void put_tensor(std::ostream& out, const Matrix<float>& m) {
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) io::put_f32(out, m(r, c));
}

void put_row(std::ostream& out, const RowVector<float>& v) {
  for (Index i = 0; i < v.size(); ++i) io::put_f32(out, v(i));
}

Matrix<float> get_tensor(std::istream& in, Index rows, Index cols) {
  Matrix<float> m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = io::get_f32(in);
  return m;
}

RowVector<float> get_row(std::istream& in, Index n) {
  RowVector<float> v(n);
  for (Index i = 0; i < n; ++i) v(i) = io::get_f32(in);
  return v;
}

void put_moments(std::ostream& out, const std::vector<LayerGrad<float>>& moments) {
  for (const auto& g : moments) {
    put_tensor(out, g.weight);
    put_row(out, g.bias);
  }
}

std::vector<LayerGrad<float>> get_moments(std::istream& in, const DenseNet<float>& net) {
  std::vector<LayerGrad<float>> out;
  for (const auto& l : net.layers())
    out.push_back({get_tensor(in, l.in_dim(), l.out_dim()), get_row(in, l.out_dim())});
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  if (ckpt.optimizers.size() != ckpt.nets.size() && !ckpt.optimizers.empty())
    throw ConfigError("checkpoint: optimizer slots must match network count");
  io::put_magic(out, kMagic);
  io::put_u32(out, kVersion);
  io::put_u32(out, std::uint32_t(ckpt.nets.size()));
  for (std::size_t n = 0; n < ckpt.nets.size(); ++n) {
    const auto& net = ckpt.nets[n];
    io::put_u32(out, std::uint32_t(net.depth()));
    for (const auto& l : net.layers()) {
      io::put_u32(out, std::uint32_t(l.in_dim()));
      io::put_u32(out, std::uint32_t(l.out_dim()));
      io::put_u32(out, static_cast<std::uint32_t>(l.activation));
    }
    for (const auto& l : net.layers()) {
      put_tensor(out, l.weight);
      put_row(out, l.bias);
    }
    const auto* opt = ckpt.optimizers.empty() || !ckpt.optimizers[n] ? nullptr : &*ckpt.optimizers[n];
    io::put_u32(out, opt ? 1 : 0);
    if (!opt) continue;
    io::put_u32(out, static_cast<std::uint32_t>(opt->settings.kind));
    io::put_le(out, opt->settings.lr);
    io::put_le(out, opt->settings.beta1);
    io::put_le(out, opt->settings.beta2);
    io::put_le(out, opt->settings.epsilon);
    io::put_u64(out, opt->step);
    const bool moments = opt->m.size() == net.depth() && opt->v.size() == net.depth();
    io::put_u32(out, moments ? 1 : 0);
    if (moments) {
      put_moments(out, opt->m);
      put_moments(out, opt->v);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, kMagic, "checkpoint");
  const auto version = io::get_u32(in);
  if (version != kVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const auto count = io::get_u32(in);
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto depth = io::get_u32(in);
    std::vector<DenseLayer<float>> layers(depth);
    for (auto& l : layers) {
      const auto in_dim = io::get_u32(in);
      const auto out_dim = io::get_u32(in);
      const auto act = io::get_u32(in);
      if (act > 3) throw ParseError("unknown activation tag " + std::to_string(act));
      l.weight.resize(in_dim, out_dim);
      l.bias.resize(out_dim);
      l.activation = static_cast<Activation>(act);
    }
    for (auto& l : layers) {
      l.weight = get_tensor(in, l.weight.rows(), l.weight.cols());
      l.bias = get_row(in, l.bias.size());
    }
    try {
      ckpt.nets.emplace_back(std::move(layers));
    } catch (const ConfigError& e) {
      throw ParseError(std::string("checkpoint: ") + e.what());
    }
    if (io::get_u32(in) == 0) {
      ckpt.optimizers.emplace_back();
      continue;
    }
    OptimState<float> opt;
    const auto kind = io::get_u32(in);
    if (kind > 1) throw ParseError("unknown optimizer kind");
    opt.settings.kind = static_cast<OptimKind>(kind);
    opt.settings.lr = io::get_le<double>(in);
    opt.settings.beta1 = io::get_le<double>(in);
    opt.settings.beta2 = io::get_le<double>(in);
    opt.settings.epsilon = io::get_le<double>(in);
    opt.step = io::get_u64(in);
    if (io::get_u32(in) == 1) {
      opt.m = get_moments(in, ckpt.nets.back());
      opt.v = get_moments(in, ckpt.nets.back());
    }
    ckpt.optimizers.emplace_back(std::move(opt));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw std::runtime_error("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_checkpoint(in);
}

Checkpoint to_checkpoint(const HierarchicalSampler<float>& s) {
  return {{s.f_mul, s.f_bin}, {std::nullopt, std::nullopt}};
}

Checkpoint to_checkpoint(const Detector<float>& d) {
  return {{d.encoder, d.classifier}, {std::nullopt, std::nullopt}};
}

HierarchicalSampler<float> sampler_from_checkpoint(const Checkpoint& c) {
  if (c.nets.size() != 2) throw ParseError("sampler checkpoint must hold two networks");
  HierarchicalSampler<float> s;
  s.f_mul = c.nets[0];
  s.f_bin = c.nets[1];
  s.classes = s.f_mul.out_dim();
  if (s.f_bin.in_dim() != s.classes) throw ParseError("sampler checkpoint: heads do not chain");
  return s;
}

Detector<float> detector_from_checkpoint(const Checkpoint& c) {
  if (c.nets.size() != 2) throw ParseError("detector checkpoint must hold two networks");
  Detector<float> d;
  d.encoder = c.nets[0];
  d.classifier = c.nets[1];
  if (d.classifier.in_dim() != d.encoder.out_dim())
    throw ParseError("detector checkpoint: encoder and classifier do not chain");
  return d;
}

}  // namespace ugsr
