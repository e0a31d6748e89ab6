#include "rft/losses.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "rft/error.hpp"

namespace rft {
namespace {

template <typename T>
struct BilinearTap {
  std::size_t index[4];
  T weight[4];
};

template <typename T>
BilinearTap<T> bilinear_tap(int width, int height, double u, double v) {
  u = std::clamp(u, 0.0, static_cast<double>(width - 1));
  v = std::clamp(v, 0.0, static_cast<double>(height - 1));
  const int x0 = static_cast<int>(u), y0 = static_cast<int>(v);
  const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
  const T wx = static_cast<T>(u - x0), wy = static_cast<T>(v - y0);
  BilinearTap<T> tap;
  tap.index[0] = static_cast<std::size_t>(y0) * width + x0;
  tap.index[1] = static_cast<std::size_t>(y0) * width + x1;
  tap.index[2] = static_cast<std::size_t>(y1) * width + x0;
  tap.index[3] = static_cast<std::size_t>(y1) * width + x1;
  tap.weight[0] = (T(1) - wx) * (T(1) - wy);
  tap.weight[1] = wx * (T(1) - wy);
  tap.weight[2] = (T(1) - wx) * wy;
  tap.weight[3] = wx * wy;
  return tap;
}

std::vector<int> grid_positions(int extent, int stride) {
  std::vector<int> out;
  for (int p = stride / 2; p < extent; p += stride) out.push_back(p);
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (window < 2) throw ConfigError("loss: window N must be >= 2");
  if (lambda < 0) throw ConfigError("loss: lambda must be >= 0");
  if (ap_bins < 2) throw ConfigError("loss: ap_bins must be >= 2");
  if (query_grid_stride < 1) throw ConfigError("loss: query_grid_stride must be >= 1");
  if (!(positive_radius_px < negative_min_dist_px)) throw ConfigError("loss: positive_radius must be < negative_min_dist");
  if (!(kappa_cap > 0 && kappa_cap <= 0.5)) throw ConfigError("loss: kappa_cap must be in (0, 0.5]");
}

template <typename T>
T cosim_loss(ScoreMapView<T> rep_a, ScoreMapView<T> rep_b, const WarpField& warp, int window, std::span<T> grad_a,
             std::span<T> grad_b, T grad_scale) {
  if (warp.width != rep_b.width || warp.height != rep_b.height) throw Error("cosim: warp does not match rep_b");
  const bool want_grad = !grad_a.empty() && !grad_b.empty();
  struct Patch {
    int x0, y0;
  };
  std::vector<Patch> patches;
  for (int y0 = 0; y0 + window <= rep_b.height; y0 += window) {
    for (int x0 = 0; x0 + window <= rep_b.width; x0 += window) {
      bool ok = true;
      for (int y = y0; y < y0 + window && ok; ++y)
        for (int x = x0; x < x0 + window && ok; ++x) ok = warp.is_valid(x, y);
      if (ok) patches.push_back({x0, y0});
    }
  }
  if (patches.empty()) throw Error("no overlap for cosim");

  const std::size_t n = static_cast<std::size_t>(window) * window;
  std::vector<T> xb(n), ya(n);
  std::vector<BilinearTap<T>> taps(n);
  T sum_cos = 0;
  const T inv_patches = T(1) / static_cast<T>(patches.size());
  for (const auto& patch : patches) {
    std::size_t k = 0;
    for (int y = patch.y0; y < patch.y0 + window; ++y) {
      for (int x = patch.x0; x < patch.x0 + window; ++x, ++k) {
        xb[k] = rep_b.at(x, y);
        const auto& uv = warp.at(x, y);
        taps[k] = bilinear_tap<T>(rep_a.width, rep_a.height, uv.x(), uv.y());
        T v = 0;
        for (int t = 0; t < 4; ++t) v += taps[k].weight[t] * rep_a.values[taps[k].index[t]];
        ya[k] = v;
      }
    }
    T dot = 0, nx2 = 0, ny2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      dot += xb[i] * ya[i];
      nx2 += xb[i] * xb[i];
      ny2 += ya[i] * ya[i];
    }
    if (nx2 <= T(0) || ny2 <= T(0)) continue;
    const T nx = std::sqrt(nx2), ny = std::sqrt(ny2);
    const T cos = dot / (nx * ny);
    sum_cos += cos;
    if (!want_grad) continue;
    // d(loss)/d(cos) = -1/patches.
    const T g = -grad_scale * inv_patches;
    k = 0;
    for (int y = patch.y0; y < patch.y0 + window; ++y) {
      for (int x = patch.x0; x < patch.x0 + window; ++x, ++k) {
        const T dx = ya[k] / (nx * ny) - cos * xb[k] / nx2;
        const T dy = xb[k] / (nx * ny) - cos * ya[k] / ny2;
        grad_b[static_cast<std::size_t>(y) * rep_b.width + x] += g * dx;
        for (int t = 0; t < 4; ++t) grad_a[taps[k].index[t]] += g * dy * taps[k].weight[t];
      }
    }
  }
  return T(1) - sum_cos * inv_patches;
}

template <typename T>
T peaky_loss(ScoreMapView<T> rep, int window, std::span<T> grad, T grad_scale) {
  if (rep.width < window || rep.height < window) throw Error("peaky: map smaller than window");
  const int nx = rep.width / window, ny = rep.height / window;
  const T inv_windows = T(1) / static_cast<T>(nx * ny);
  const T inv_area = T(1) / static_cast<T>(window * window);
  T sum = 0;
  for (int wy = 0; wy < ny; ++wy) {
    for (int wx = 0; wx < nx; ++wx) {
      T mx = rep.at(wx * window, wy * window);
      std::size_t arg = static_cast<std::size_t>(wy * window) * rep.width + wx * window;
      T total = 0;
      for (int y = wy * window; y < (wy + 1) * window; ++y) {
        for (int x = wx * window; x < (wx + 1) * window; ++x) {
          const T v = rep.at(x, y);
          total += v;
          if (v > mx) {
            mx = v;
            arg = static_cast<std::size_t>(y) * rep.width + x;
          }
        }
      }
      sum += mx - total * inv_area;
      if (!grad.empty()) {
        const T g = -grad_scale * inv_windows;
        for (int y = wy * window; y < (wy + 1) * window; ++y)
          for (int x = wx * window; x < (wx + 1) * window; ++x)
            grad[static_cast<std::size_t>(y) * rep.width + x] -= g * inv_area;
        grad[arg] += g;
      }
    }
  }
  return T(1) - sum * inv_windows;
}

template <typename T>
T soft_ap_from_distances(std::span<const T> distances, std::span<const std::uint8_t> positive, int bins,
                         std::span<T> grad_distances) {
  if (bins < 2) throw Error("soft_ap: need at least 2 bins");
  const std::size_t n = distances.size();
  const T delta = T(2) / static_cast<T>(bins - 1);
  std::vector<int> lower(n);
  std::vector<T> upper_mass(n);  // mass in bin lower+1; lower bin holds 1 - upper_mass
  std::vector<std::uint8_t> clamped(n, 0);
  std::vector<T> hist_all(bins, T(0)), hist_pos(bins, T(0));
  std::size_t positives = 0;
  for (std::size_t j = 0; j < n; ++j) {
    T d = distances[j];
    if (d < T(0) || d > T(2)) {
      clamped[j] = 1;
      d = std::clamp(d, T(0), T(2));
    }
    const T t = d / delta;
    const int k0 = std::min(static_cast<int>(t), bins - 2);
    lower[j] = k0;
    upper_mass[j] = t - static_cast<T>(k0);
    hist_all[k0] += T(1) - upper_mass[j];
    hist_all[k0 + 1] += upper_mass[j];
    if (positive[j]) {
      ++positives;
      hist_pos[k0] += T(1) - upper_mass[j];
      hist_pos[k0 + 1] += upper_mass[j];
    }
  }
  if (positives == 0) throw Error("soft_ap: no positive candidate");
  std::vector<T> cum_all(bins), cum_pos(bins);
  std::partial_sum(hist_all.begin(), hist_all.end(), cum_all.begin());
  std::partial_sum(hist_pos.begin(), hist_pos.end(), cum_pos.begin());

  const bool want_grad = !grad_distances.empty();
  std::vector<T> g_cum_all(want_grad ? bins : 0, T(0)), g_cum_pos(want_grad ? bins : 0, T(0));
  std::vector<T> g_own_lower(want_grad ? n : 0, T(0)), g_own_upper(want_grad ? n : 0, T(0));
  const T inv_pos = T(1) / static_cast<T>(positives);
  T ap = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!positive[i]) continue;
    const int k0 = lower[i];
    const T q[2] = {T(1) - upper_mass[i], upper_mass[i]};
    const T own_cum[2] = {q[0], T(1)};
    for (int b = 0; b < 2; ++b) {
      const int k = k0 + b;
      const T a = T(1) + cum_pos[k] - own_cum[b];
      const T bb = T(1) + cum_all[k] - own_cum[b];
      ap += q[b] * a / bb;
      if (!want_grad) continue;
      const T ga = inv_pos * q[b] / bb;
      const T gb = -inv_pos * q[b] * a / (bb * bb);
      g_cum_pos[k] += ga;
      g_cum_all[k] += gb;
      const T g_direct = inv_pos * a / bb;
      const T g_own = -(ga + gb);  // own_cum enters both numerator and denominator with a minus sign
      if (b == 0) {
        g_own_lower[i] += g_direct + g_own;
      } else {
        g_own_upper[i] += g_direct;
        g_own_lower[i] += g_own;  // own_cum[1] = q0 + q1
        g_own_upper[i] += g_own;
      }
    }
  }
  ap *= inv_pos;
  if (!want_grad) return ap;

  // Reverse cumulative sums: histogram bin k feeds every cumulative entry at or after k.
  for (int k = bins - 2; k >= 0; --k) {
    g_cum_all[k] += g_cum_all[k + 1];
    g_cum_pos[k] += g_cum_pos[k + 1];
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (clamped[j]) {
      grad_distances[j] = T(0);
      continue;
    }
    const int k0 = lower[j];
    T g_lower = g_cum_all[k0] + g_own_lower[j];
    T g_upper = g_cum_all[k0 + 1] + g_own_upper[j];
    if (positive[j]) {
      g_lower += g_cum_pos[k0];
      g_upper += g_cum_pos[k0 + 1];
    }
    // d(lower mass)/dd = -1/delta, d(upper mass)/dd = +1/delta.
    grad_distances[j] = (g_upper - g_lower) / delta;
  }
  return ap;
}

double soft_ap(std::span<const double> query, const std::vector<std::vector<double>>& candidates,
               const std::vector<bool>& positive, int bins) {
  if (candidates.size() != positive.size()) throw Error("soft_ap: candidate/flag size mismatch");
  std::vector<double> d(candidates.size());
  std::vector<std::uint8_t> pos(candidates.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (candidates[j].size() != query.size()) throw Error("soft_ap: descriptor dimension mismatch");
    double s = 0;
    for (std::size_t k = 0; k < query.size(); ++k) s += (query[k] - candidates[j][k]) * (query[k] - candidates[j][k]);
    d[j] = std::sqrt(s);
    pos[j] = positive[j] ? 1 : 0;
  }
  return soft_ap_from_distances<double>(d, pos, bins);
}

double exact_ap(std::span<const double> distances, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return distances[a] < distances[b]; });
  double hits = 0, sum = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (positive[order[r]]) {
      hits += 1;
      sum += hits / static_cast<double>(r + 1);
    }
  }
  if (hits == 0) throw Error("exact_ap: no positive candidate");
  return sum / hits;
}

double batch_kappa(std::span<const double> ap_values, double cap) {
  if (ap_values.empty()) throw Error("batch_kappa: empty AP list");
  const double mean = std::accumulate(ap_values.begin(), ap_values.end(), 0.0) / static_cast<double>(ap_values.size());
  return std::min(cap, mean);
}

double ap_kappa_loss(double ap, double reliability, double kappa) {
  return 1.0 - (ap * reliability + kappa * (1.0 - reliability));
}

template <typename T>
double batch_total_loss(std::span<const PairOutputs<T>> pairs, const LossConfig& cfg, BatchLossReport& report,
                        std::vector<PairGrads<T>>* grads, std::optional<double> kappa_override) {
  cfg.validate();
  if (pairs.empty()) throw Error("total_loss: empty batch");
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const bool want_grad = grads != nullptr;
  const T inv_pairs = T(1) / static_cast<T>(pairs.size());
  if (want_grad) {
    grads->clear();
    for (const auto& p : pairs) {
      grads->push_back({FeatureMaps<T>(p.maps_a->width, p.maps_a->height, p.maps_a->dim),
                        FeatureMaps<T>(p.maps_b->width, p.maps_b->height, p.maps_b->dim)});
    }
  }

  report = BatchLossReport{};
  struct Query {
    std::size_t pair;
    std::size_t pixel_a;  // query pixel in maps_a
    int row;              // row in the pair's query matrix
    std::vector<int> candidates;
    std::vector<T> grad_d;  // d(AP)/d(distance) per candidate
    T ap;
    T reliability;
  };
  std::vector<Query> queries;
  std::vector<Mat> query_desc(pairs.size()), cand_desc(pairs.size()), dist(pairs.size());
  std::vector<std::vector<std::size_t>> query_pixels(pairs.size()), cand_pixels(pairs.size());

  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& a = *pairs[pi].maps_a;
    const auto& b = *pairs[pi].maps_b;
    const auto& warp = *pairs[pi].warp;
    if (a.dim != b.dim) throw Error("total_loss: descriptor dimension mismatch");
    const ScoreMapView<T> rep_a{a.width, a.height, a.repeatability};
    const ScoreMapView<T> rep_b{b.width, b.height, b.repeatability};
    std::span<T> ga_rep, gb_rep;
    if (want_grad) {
      ga_rep = (*grads)[pi].grad_a.repeatability;
      gb_rep = (*grads)[pi].grad_b.repeatability;
    }
    const T rep_scale = static_cast<T>(cfg.rep_weight) * inv_pairs;
    const T cosim = cosim_loss<T>(rep_a, rep_b, warp, cfg.window, ga_rep, gb_rep, rep_scale);
    const T peaky_a = peaky_loss<T>(rep_a, cfg.window, ga_rep, rep_scale * static_cast<T>(cfg.lambda));
    const T peaky_b = peaky_loss<T>(rep_b, cfg.window, gb_rep, rep_scale * static_cast<T>(cfg.lambda));
    report.l_cosim += static_cast<double>(cosim) / pairs.size();
    report.l_peaky_a += static_cast<double>(peaky_a) / pairs.size();
    report.l_peaky_b += static_cast<double>(peaky_b) / pairs.size();

    // Queries on a's grid (the original image), candidates on b's grid. A candidate's position is
    // its warped location in a, so positives are judged in a's frame.
    std::vector<std::size_t>& query_pixel = query_pixels[pi];
    std::vector<Eigen::Vector2d> query_pos;
    for (int y : grid_positions(a.height, cfg.query_grid_stride))
      for (int x : grid_positions(a.width, cfg.query_grid_stride)) {
        query_pixel.push_back(a.index(x, y));
        query_pos.emplace_back(x, y);
      }
    std::vector<std::size_t>& cand_pixel = cand_pixels[pi];
    std::vector<Eigen::Vector2d> cand_target;
    for (int y : grid_positions(b.height, cfg.query_grid_stride))
      for (int x : grid_positions(b.width, cfg.query_grid_stride)) {
        if (!warp.is_valid(x, y)) continue;
        cand_pixel.push_back(b.index(x, y));
        cand_target.push_back(warp.at(x, y).template cast<double>());
      }

    const int dim = a.dim;
    Mat& qd = query_desc[pi];
    Mat& cd = cand_desc[pi];
    qd.resize(dim, static_cast<Eigen::Index>(query_pixel.size()));
    cd.resize(dim, static_cast<Eigen::Index>(cand_pixel.size()));
    for (std::size_t q = 0; q < query_pixel.size(); ++q)
      for (int d = 0; d < dim; ++d) qd(d, q) = a.desc(d, query_pixel[q]);
    for (std::size_t c = 0; c < cand_pixel.size(); ++c)
      for (int d = 0; d < dim; ++d) cd(d, c) = b.desc(d, cand_pixel[c]);
    const Mat dots = qd.transpose() * cd;
    dist[pi] = (T(2) - T(2) * dots.array()).max(T(1e-12)).sqrt().matrix();

    const double r_pos2 = cfg.positive_radius_px * cfg.positive_radius_px;
    const double r_neg2 = cfg.negative_min_dist_px * cfg.negative_min_dist_px;
    for (std::size_t q = 0; q < query_pixel.size(); ++q) {
      Query query;
      query.pair = pi;
      query.pixel_a = query_pixel[q];
      query.row = static_cast<int>(q);
      std::vector<T> d;
      std::vector<std::uint8_t> labels;
      bool any_pos = false;
      for (std::size_t c = 0; c < cand_target.size(); ++c) {
        const double r2 = (cand_target[c] - query_pos[q]).squaredNorm();
        const bool pos = r2 <= r_pos2;
        if (!pos && r2 < r_neg2) continue;
        any_pos |= pos;
        query.candidates.push_back(static_cast<int>(c));
        d.push_back(dist[pi](q, c));
        labels.push_back(pos ? 1 : 0);
      }
      if (!any_pos) continue;
      if (want_grad) query.grad_d.assign(d.size(), T(0));
      query.ap = soft_ap_from_distances<T>(d, labels, cfg.ap_bins, query.grad_d);
      query.reliability = a.reliability[query_pixel[q]];
      queries.push_back(std::move(query));
    }
  }
  if (queries.empty()) throw Error("total_loss: no query has a positive match");

  report.query_aps.reserve(queries.size());
  for (const auto& q : queries) report.query_aps.push_back(static_cast<double>(q.ap));
  const double kappa = kappa_override ? *kappa_override : batch_kappa(report.query_aps, cfg.kappa_cap);
  double l_ap = 0;
  for (const auto& q : queries) l_ap += ap_kappa_loss(static_cast<double>(q.ap), static_cast<double>(q.reliability), kappa);
  l_ap /= static_cast<double>(queries.size());
  report.mean_ap = std::accumulate(report.query_aps.begin(), report.query_aps.end(), 0.0) / report.query_aps.size();
  report.kappa_used = kappa;
  report.l_ap = l_ap;
  report.l_rep = report.l_cosim + cfg.lambda * (report.l_peaky_a + report.l_peaky_b);
  report.total = cfg.rep_weight * report.l_rep + cfg.ap_weight * report.l_ap;

  if (want_grad) {
    const T scale = static_cast<T>(cfg.ap_weight) / static_cast<T>(queries.size());
    std::vector<Mat> g_dot(pairs.size());
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) g_dot[pi] = Mat::Zero(dist[pi].rows(), dist[pi].cols());
    for (const auto& q : queries) {
      const T g_ap = -scale * q.reliability;
      (*grads)[q.pair].grad_a.reliability[q.pixel_a] += -scale * (q.ap - static_cast<T>(kappa));
      for (std::size_t k = 0; k < q.candidates.size(); ++k) {
        const int c = q.candidates[k];
        const T d = dist[q.pair](q.row, c);
        if (d <= T(1e-6) + std::numeric_limits<T>::epsilon()) continue;  // clamped distance
        g_dot[q.pair](q.row, c) += g_ap * q.grad_d[k] * (-T(1) / d);
      }
    }
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      if (g_dot[pi].size() == 0) continue;
      const Mat gq = cand_desc[pi] * g_dot[pi].transpose();  // dim × queries
      const Mat gc = query_desc[pi] * g_dot[pi];              // dim × candidates
      auto& grad_a = (*grads)[pi].grad_a;
      auto& grad_b = (*grads)[pi].grad_b;
      for (std::size_t q = 0; q < query_pixels[pi].size(); ++q)
        for (int d = 0; d < grad_a.dim; ++d) grad_a.desc(d, query_pixels[pi][q]) += gq(d, static_cast<Eigen::Index>(q));
      for (std::size_t c = 0; c < cand_pixels[pi].size(); ++c)
        for (int d = 0; d < grad_b.dim; ++d) grad_b.desc(d, cand_pixels[pi][c]) += gc(d, static_cast<Eigen::Index>(c));
    }
  }
  return report.total;
}

template <typename T>
double total_loss(const FeatureMaps<T>& maps_a, const FeatureMaps<T>& maps_b, const WarpField& warp,
                  const LossConfig& cfg, BatchLossReport& report, PairGrads<T>* grads,
                  std::optional<double> kappa_override) {
  const PairOutputs<T> pair{&maps_a, &maps_b, &warp};
  if (!grads) return batch_total_loss<T>(std::span(&pair, 1), cfg, report, nullptr, kappa_override);
  std::vector<PairGrads<T>> all;
  const double loss = batch_total_loss<T>(std::span(&pair, 1), cfg, report, &all, kappa_override);
  *grads = std::move(all.front());
  return loss;
}

#define RFT_INSTANTIATE_LOSSES(T)                                                                                 \
  template T cosim_loss<T>(ScoreMapView<T>, ScoreMapView<T>, const WarpField&, int, std::span<T>, std::span<T>, \
                           T);                                                                                    \
  template T peaky_loss<T>(ScoreMapView<T>, int, std::span<T>, T);                                               \
  template T soft_ap_from_distances<T>(std::span<const T>, std::span<const std::uint8_t>, int, std::span<T>);    \
  template double batch_total_loss<T>(std::span<const PairOutputs<T>>, const LossConfig&, BatchLossReport&,      \
                                      std::vector<PairGrads<T>>*, std::optional<double>);                        \
  template double total_loss<T>(const FeatureMaps<T>&, const FeatureMaps<T>&, const WarpField&, const LossConfig&, \
                                BatchLossReport&, PairGrads<T>*, std::optional<double>);

RFT_INSTANTIATE_LOSSES(float)
RFT_INSTANTIATE_LOSSES(double)

#undef RFT_INSTANTIATE_LOSSES

}  // namespace rft
