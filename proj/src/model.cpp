#include "rft/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "rft/error.hpp"
#include "rft/random.hpp"

namespace rft {
namespace {

constexpr int kKernel = 3;
constexpr int kTaps = kKernel * kKernel;
constexpr std::size_t kBandBudget = std::size_t{1} << 17;  // im2col elements per band

// ImageNet statistics, applied before the first convolution.
constexpr float kMean[3] = {0.485f, 0.456f, 0.406f};
constexpr float kStd[3] = {0.229f, 0.224f, 0.225f};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapRM = Eigen::Map<const RowMatrix<T>>;

int rows_per_band(int cin, int width) {
  const std::size_t per_row = static_cast<std::size_t>(cin) * kTaps * width;
  return static_cast<int>(std::max<std::size_t>(1, kBandBudget / std::max<std::size_t>(1, per_row)));
}

// col has K = cin*9 rows and (y1-y0)*W columns.
template <typename T>
void im2col_band(const T* in, int cin, int h, int w, int dil, int y0, int y1, T* col) {
  const int band_px = (y1 - y0) * w;
  for (int ci = 0; ci < cin; ++ci) {
    const T* plane = in + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci) * kTaps + ky * kKernel + kx) * band_px;
        const int oy = (ky - 1) * dil;
        const int ox = (kx - 1) * dil;
        const int x_lo = std::clamp(-ox, 0, w);
        const int x_hi = std::clamp(w - ox, 0, w);
        for (int y = y0; y < y1; ++y) {
          T* dst = row + static_cast<std::size_t>(y - y0) * w;
          const int sy = y + oy;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          std::fill(dst, dst + x_lo, T(0));
          std::memcpy(dst + x_lo, plane + static_cast<std::size_t>(sy) * w + x_lo + ox, sizeof(T) * (x_hi - x_lo));
          std::fill(dst + x_hi, dst + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_band_add(const T* col, int cin, int h, int w, int dil, int y0, int y1, T* out) {
  const int band_px = (y1 - y0) * w;
  for (int ci = 0; ci < cin; ++ci) {
    T* plane = out + static_cast<std::size_t>(ci) * h * w;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci) * kTaps + ky * kKernel + kx) * band_px;
        const int oy = (ky - 1) * dil;
        const int ox = (kx - 1) * dil;
        const int x_lo = std::clamp(-ox, 0, w);
        const int x_hi = std::clamp(w - ox, 0, w);
        for (int y = y0; y < y1; ++y) {
          const int sy = y + oy;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + static_cast<std::size_t>(y - y0) * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w + ox;
          for (int x = x_lo; x < x_hi; ++x) dst[x] += src[x];
        }
      }
    }
  }
}

template <typename T>
void conv_forward(const T* in, int cin, int h, int w, const T* weight, const T* bias, int cout, int dil, T* out) {
  const int k = cin * kTaps;
  const int band_rows = rows_per_band(cin, w);
  std::vector<T> col;
  ConstMapRM<T> wmat(weight, cout, k);
  MapRM<T> omat(out, cout, static_cast<Eigen::Index>(h) * w);
  for (int y0 = 0; y0 < h; y0 += band_rows) {
    const int y1 = std::min(h, y0 + band_rows);
    const int band_px = (y1 - y0) * w;
    col.resize(static_cast<std::size_t>(k) * band_px);
    im2col_band(in, cin, h, w, dil, y0, y1, col.data());
    ConstMapRM<T> cmat(col.data(), k, band_px);
    omat.middleCols(static_cast<Eigen::Index>(y0) * w, band_px).noalias() = wmat * cmat;
  }
  for (int co = 0; co < cout; ++co) omat.row(co).array() += bias[co];
}

template <typename T>
void conv_backward(const T* in, int cin, int h, int w, const T* weight, int cout, int dil, const T* dout, T* dweight,
                   T* dbias, T* din) {
  const int k = cin * kTaps;
  const int band_rows = rows_per_band(cin, w);
  std::vector<T> col;
  std::vector<T> dcol;
  ConstMapRM<T> wmat(weight, cout, k);
  ConstMapRM<T> gmat(dout, cout, static_cast<Eigen::Index>(h) * w);
  MapRM<T> dwmat(dweight, cout, k);
  // Plain loop: Eigen's vectorized sum peels by pointer alignment, which would make the
  // result depend on where the allocator put `dout`.
  const std::size_t px = static_cast<std::size_t>(h) * w;
  for (int co = 0; co < cout; ++co) {
    T s = 0;
    for (const T* g = dout + co * px; g != dout + (co + 1) * px; ++g) s += *g;
    dbias[co] += s;
  }
  for (int y0 = 0; y0 < h; y0 += band_rows) {
    const int y1 = std::min(h, y0 + band_rows);
    const int band_px = (y1 - y0) * w;
    col.resize(static_cast<std::size_t>(k) * band_px);
    im2col_band(in, cin, h, w, dil, y0, y1, col.data());
    ConstMapRM<T> cmat(col.data(), k, band_px);
    const auto gband = gmat.middleCols(static_cast<Eigen::Index>(y0) * w, band_px);
    dwmat.noalias() += gband * cmat.transpose();
    if (din) {
      dcol.resize(col.size());
      MapRM<T> dcmat(dcol.data(), k, band_px);
      dcmat.noalias() = wmat.transpose() * gband;
      col2im_band_add(dcol.data(), cin, h, w, dil, y0, y1, din);
    }
  }
}

template <typename T>
T sigmoid_open(T z) {
  const T s = T(1) / (T(1) + std::exp(-z));
  const T eps = std::numeric_limits<T>::epsilon();
  return std::clamp(s, eps, T(1) - eps);
}

int layer_count(const ModelConfig& cfg) { return static_cast<int>(cfg.channel_widths.size()) + 1; }

int layer_out(const ModelConfig& cfg, int l) {
  return l < static_cast<int>(cfg.channel_widths.size()) ? cfg.channel_widths[l] : cfg.descriptor_dim;
}

int layer_in(const ModelConfig& cfg, int l) { return l == 0 ? 3 : layer_out(cfg, l - 1); }

}  // namespace

ModelConfig ModelConfig::toy() {
  ModelConfig cfg;
  cfg.descriptor_dim = 32;
  cfg.channel_widths = {8, 8, 16, 16, 32};
  cfg.dilations = {1, 1, 2, 2, 4, 4};
  return cfg;
}

void ModelConfig::validate() const {
  if (descriptor_dim < 2) throw ConfigError("model: descriptor_dim must be >= 2");
  if (dilations.size() != channel_widths.size() + 1)
    throw ConfigError("model: need one dilation per hidden layer plus one for the descriptor layer");
  for (int c : channel_widths)
    if (c < 1) throw ConfigError("model: channel widths must be positive");
  for (int d : dilations)
    if (d < 1) throw ConfigError("model: dilations must be positive");
}

std::size_t ModelConfig::parameter_count() const {
  std::size_t n = 0;
  for (int l = 0; l < layer_count(*this); ++l) {
    n += static_cast<std::size_t>(layer_out(*this, l)) * (layer_in(*this, l) * kTaps + 1);
  }
  n += 2 * (2 * static_cast<std::size_t>(descriptor_dim) + 2);
  return n;
}

template <typename T>
std::size_t Params<T>::count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

template <typename T>
Params<T> Params<T>::zeros_like() const {
  Params out;
  out.config = config;
  for (const auto& t : tensors) out.tensors.push_back({t.name, t.shape, std::vector<T>(t.values.size(), T(0))});
  return out;
}

template <typename T>
T& Params<T>::flat(std::size_t i) {
  for (auto& t : tensors) {
    if (i < t.values.size()) return t.values[i];
    i -= t.values.size();
  }
  throw Error("parameter index out of range");
}

template <typename T>
T Params<T>::flat(std::size_t i) const {
  return const_cast<Params*>(this)->flat(i);
}

template <typename T>
Params<T> init_params(const ModelConfig& cfg) {
  cfg.validate();
  Params<T> params;
  params.config = cfg;
  const int layers = layer_count(cfg);
  std::uint64_t tensor_id = 0;
  auto add = [&](std::string name, std::vector<int> shape, double sigma) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    Rng rng(mix_seed(cfg.seed, tensor_id++));
    std::vector<T> values(n);
    for (auto& v : values) v = static_cast<T>(sigma > 0 ? rng.normal(0.0, sigma) : 0.0);
    params.tensors.push_back({std::move(name), std::move(shape), std::move(values)});
  };
  for (int l = 0; l < layers; ++l) {
    const int cin = layer_in(cfg, l), cout = layer_out(cfg, l);
    const double fan_in = cin * kTaps;
    const bool hidden = l + 1 < layers;
    add("conv" + std::to_string(l) + ".weight", {cout, cin, kKernel, kKernel},
        std::sqrt((hidden ? 2.0 : 1.0) / fan_in));
    add("conv" + std::to_string(l) + ".bias", {cout}, 0.0);
  }
  // The heads see squared features, which are all positive and unnormalized, so fan-in scaled
  // weights put a large common offset on the logits and start the scores saturated at 0 or 1
  // depending on the seed. Small weights start both scores near 0.5.
  const double head_sigma = 0.01 / std::sqrt(static_cast<double>(cfg.descriptor_dim));
  add("rep_head.weight", {2, cfg.descriptor_dim}, head_sigma);
  add("rep_head.bias", {2}, 0.0);
  add("rel_head.weight", {2, cfg.descriptor_dim}, head_sigma);
  add("rel_head.bias", {2}, 0.0);
  return params;
}

template <typename T>
FeatureMaps<T> forward(const Image& image, const Params<T>& params, ForwardCache<T>* cache) {
  const ModelConfig& cfg = params.config;
  if (image.width < ModelConfig::kMinInputSize || image.height < ModelConfig::kMinInputSize)
    throw Error("input too small");
  if (image.channels != 3) throw Error("forward: expected an RGB image");
  const int w = image.width, h = image.height;
  const std::size_t px = static_cast<std::size_t>(w) * h;
  const int layers = layer_count(cfg);

  std::vector<T> input(3 * px);
  for (std::size_t p = 0; p < px; ++p)
    for (int c = 0; c < 3; ++c) input[c * px + p] = static_cast<T>((image.data[p * 3 + c] - kMean[c]) / kStd[c]);

  std::vector<T> current = std::move(input);
  std::vector<T> saved_input;
  if (cache) {
    cache->width = w;
    cache->height = h;
    cache->activations.assign(layers, {});
    saved_input = current;
  }
  for (int l = 0; l < layers; ++l) {
    const int cin = layer_in(cfg, l), cout = layer_out(cfg, l);
    const auto& weight = params.tensors[2 * l].values;
    const auto& bias = params.tensors[2 * l + 1].values;
    std::vector<T> out(static_cast<std::size_t>(cout) * px);
    conv_forward(current.data(), cin, h, w, weight.data(), bias.data(), cout, cfg.dilations[l], out.data());
    if (l + 1 < layers) {
      for (auto& v : out) v = std::max(v, T(0));
    }
    if (cache) cache->activations[l] = out;
    current = std::move(out);
  }
  if (cache) cache->input = std::move(saved_input);

  const int dim = cfg.descriptor_dim;
  FeatureMaps<T> maps(w, h, dim);
  const auto& rep_w = params.tensors[2 * layers].values;
  const auto& rep_b = params.tensors[2 * layers + 1].values;
  const auto& rel_w = params.tensors[2 * layers + 2].values;
  const auto& rel_b = params.tensors[2 * layers + 3].values;
  std::vector<T> norms(px), rep_diff(px), rel_diff(px);
  for (std::size_t p = 0; p < px; ++p) {
    T sq = 0, zr = rep_b[0] - rep_b[1], zl = rel_b[0] - rel_b[1];
    for (int d = 0; d < dim; ++d) {
      const T f = current[d * px + p];
      const T f2 = f * f;
      sq += f2;
      zr += (rep_w[d] - rep_w[dim + d]) * f2;
      zl += (rel_w[d] - rel_w[dim + d]) * f2;
    }
    const T n = std::sqrt(sq + T(1e-12));
    norms[p] = n;
    for (int d = 0; d < dim; ++d) maps.descriptors[d * px + p] = current[d * px + p] / n;
    rep_diff[p] = zr;
    rel_diff[p] = zl;
    maps.repeatability[p] = sigmoid_open(zr);
    maps.reliability[p] = sigmoid_open(zl);
  }
  if (cache) {
    cache->norms = std::move(norms);
    cache->rep_logit_diff = std::move(rep_diff);
    cache->rel_logit_diff = std::move(rel_diff);
  }
  return maps;
}

template <typename T>
void backward(const Params<T>& params, const ForwardCache<T>& cache, const FeatureMaps<T>& g, Params<T>& grads) {
  const ModelConfig& cfg = params.config;
  const int w = cache.width, h = cache.height;
  const std::size_t px = static_cast<std::size_t>(w) * h;
  const int layers = layer_count(cfg);
  const int dim = cfg.descriptor_dim;
  const std::vector<T>& f = cache.activations.back();

  const auto& rep_w = params.tensors[2 * layers].values;
  const auto& rel_w = params.tensors[2 * layers + 2].values;
  auto& g_rep_w = grads.tensors[2 * layers].values;
  auto& g_rep_b = grads.tensors[2 * layers + 1].values;
  auto& g_rel_w = grads.tensors[2 * layers + 2].values;
  auto& g_rel_b = grads.tensors[2 * layers + 3].values;

  std::vector<T> df(static_cast<std::size_t>(dim) * px, T(0));
  for (std::size_t p = 0; p < px; ++p) {
    const T sr = T(1) / (T(1) + std::exp(-cache.rep_logit_diff[p]));
    const T sl = T(1) / (T(1) + std::exp(-cache.rel_logit_diff[p]));
    const T dzr = g.repeatability[p] * sr * (T(1) - sr);
    const T dzl = g.reliability[p] * sl * (T(1) - sl);
    g_rep_b[0] += dzr;
    g_rep_b[1] -= dzr;
    g_rel_b[0] += dzl;
    g_rel_b[1] -= dzl;
    const T n = cache.norms[p];
    T dot = 0;
    for (int d = 0; d < dim; ++d) dot += (f[d * px + p] / n) * g.descriptors[d * px + p];
    for (int d = 0; d < dim; ++d) {
      const T fv = f[d * px + p];
      const T f2 = fv * fv;
      g_rep_w[d] += dzr * f2;
      g_rep_w[dim + d] -= dzr * f2;
      g_rel_w[d] += dzl * f2;
      g_rel_w[dim + d] -= dzl * f2;
      const T dsq = dzr * (rep_w[d] - rep_w[dim + d]) + dzl * (rel_w[d] - rel_w[dim + d]);
      const T unit = fv / n;
      df[d * px + p] = T(2) * fv * dsq + (g.descriptors[d * px + p] - unit * dot) / n;
    }
  }

  std::vector<T> dout = std::move(df);
  for (int l = layers - 1; l >= 0; --l) {
    const int cin = layer_in(cfg, l), cout = layer_out(cfg, l);
    if (l + 1 < layers) {
      const auto& act = cache.activations[l];
      for (std::size_t i = 0; i < dout.size(); ++i)
        if (act[i] <= T(0)) dout[i] = T(0);
    }
    const std::vector<T>& in = l == 0 ? cache.input : cache.activations[l - 1];
    std::vector<T> din;
    if (l > 0) din.assign(static_cast<std::size_t>(cin) * px, T(0));
    conv_backward(in.data(), cin, h, w, params.tensors[2 * l].values.data(), cout, cfg.dilations[l], dout.data(),
                  grads.tensors[2 * l].values.data(), grads.tensors[2 * l + 1].values.data(),
                  l > 0 ? din.data() : nullptr);
    dout = std::move(din);
  }
}

FeatureNetwork make_network(const Params<float>& params) {
  return [params](const Image& image) { return forward<float>(image, params); };
}

void save_checkpoint(const Params<float>& params, const std::filesystem::path& path) {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["config"] = {{"descriptor_dim", params.config.descriptor_dim},
                 {"channel_widths", params.config.channel_widths},
                 {"dilations", params.config.dilations},
                 {"seed", params.config.seed}};
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : params.tensors) j["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"values", t.values}});
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IoError("cannot write checkpoint: " + path.string());
    out << j.dump();
  }
  std::filesystem::rename(tmp, path);
}

Params<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("version", "") != kCheckpointVersion) throw IoError("unsupported checkpoint version in " + path.string());
  ModelConfig cfg;
  cfg.descriptor_dim = j["config"]["descriptor_dim"].get<int>();
  cfg.channel_widths = j["config"]["channel_widths"].get<std::vector<int>>();
  cfg.dilations = j["config"]["dilations"].get<std::vector<int>>();
  cfg.seed = j["config"]["seed"].get<std::uint64_t>();
  Params<float> params = init_params<float>(cfg);
  const auto& tensors = j["tensors"];
  if (tensors.size() != params.tensors.size()) throw IoError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = params.tensors[i];
    if (tensors[i]["name"].get<std::string>() != t.name || tensors[i]["shape"].get<std::vector<int>>() != t.shape)
      throw IoError("checkpoint tensor mismatch at " + t.name);
    const std::size_t expected = t.values.size();
    t.values = tensors[i]["values"].get<std::vector<float>>();
    if (t.values.size() != expected) throw IoError("checkpoint tensor size mismatch at " + t.name);
  }
  return params;
}

template struct Params<float>;
template struct Params<double>;
template Params<float> init_params<float>(const ModelConfig&);
template Params<double> init_params<double>(const ModelConfig&);
template FeatureMaps<float> forward<float>(const Image&, const Params<float>&, ForwardCache<float>*);
template FeatureMaps<double> forward<double>(const Image&, const Params<double>&, ForwardCache<double>*);
template void backward<float>(const Params<float>&, const ForwardCache<float>&, const FeatureMaps<float>&,
                              Params<float>&);
template void backward<double>(const Params<double>&, const ForwardCache<double>&, const FeatureMaps<double>&,
                               Params<double>&);

}  // namespace rft
