#include "torq/intra_rotation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace torq {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kHalfPi = 1.5707963267948966192313216916398;
constexpr double kAngleDedupe = 1e-12;

double fold_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

// One boundary crossing of one sample on one axis of the rotated pair.
struct AngleEvent {
  double angle;
  std::int32_t row;
  std::int8_t axis;
};

// Under G(p,q)(theta) the pair (u_b, v_b) maps to
//   axis 0:  u_b cos(theta) + v_b sin(theta) = r_b cos(phi_b - theta)
//   axis 1: -u_b sin(theta) + v_b cos(theta) = r_b cos(phi_b - pi/2 - theta)
// so |value| = d_j at theta = base_phi +- alpha and base_phi +- alpha + pi
// with alpha = acos(d_j / r_b).
void collect_events(const Eigen::Ref<const Eigen::VectorXd>& u,
                    const Eigen::Ref<const Eigen::VectorXd>& v,
                    const MxFormat& fmt, Eigen::Index stride,
                    std::vector<AngleEvent>& out) {
  const double pi = kHalfPi * 2.0;
  for (Eigen::Index b = 0; b < u.size(); b += stride) {
    const double r = std::hypot(u[b], v[b]);
    if (r == 0.0) continue;
    const double phi = std::atan2(v[b], u[b]);
    for (double d : fmt.boundaries) {
      if (d > r) break;
      const double alpha = std::acos(std::min(1.0, d / r));
      for (std::int8_t axis = 0; axis < 2; ++axis) {
        const double base = axis == 0 ? phi : phi - kHalfPi;
        const std::int32_t row = static_cast<std::int32_t>(b);
        out.push_back({fold_angle(base - alpha), row, axis});
        out.push_back({fold_angle(base + alpha), row, axis});
        out.push_back({fold_angle(base - alpha + pi), row, axis});
        out.push_back({fold_angle(base + alpha + pi), row, axis});
      }
    }
  }
}

struct AngleGroup {
  double first;
  double last;
  size_t begin;
  size_t end;
};

std::vector<AngleGroup> group_events(std::vector<AngleEvent>& events) {
  std::sort(events.begin(), events.end(),
            [](const AngleEvent& a, const AngleEvent& b) { return a.angle < b.angle; });
  std::vector<AngleGroup> groups;
  for (size_t i = 0; i < events.size(); ++i) {
    if (groups.empty() || events[i].angle - groups.back().last > kAngleDedupe) {
      groups.push_back({events[i].angle, events[i].angle, i, i + 1});
    } else {
      groups.back().last = events[i].angle;
      groups.back().end = i + 1;
    }
  }
  return groups;
}

}  // namespace

double clip_to_pow2(double x, Pow2Mode mode) {
  const double l = std::log2(x);
  return std::exp2(mode == Pow2Mode::Round ? std::round(l) : std::floor(l));
}

double loss_from_counts(const std::vector<std::int64_t>& counts, double total) {
  const double uniform = 1.0 / static_cast<double>(counts.size());
  double loss = 0.0;
  for (std::int64_t c : counts) {
    const double dev = static_cast<double>(c) / total - uniform;
    loss += dev * dev;
  }
  return loss;
}

double code_loss(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                 const MxFormat& fmt) {
  if (normalized.size() == 0) throw InvalidInput("code_loss: empty input");
  return loss_from_counts(occupancy_counts(normalized, fmt),
                          static_cast<double>(normalized.size()));
}

ScaleVector s_step(const Eigen::Ref<const Eigen::MatrixXd>& data,
                   const Eigen::Ref<const Eigen::MatrixXd>& r_intra,
                   const MxFormat& fmt, Pow2Mode mode) {
  if (data.cols() != r_intra.rows())
    throw ShapeError("s_step: column count does not match rotation size");
  const Eigen::MatrixXd z = data * r_intra;
  ScaleVector out;
  out.scales.resize(z.rows());
  for (Eigen::Index b = 0; b < z.rows(); ++b) {
    const double m = z.row(b).cwiseAbs().maxCoeff();
    out.scales[b] = m == 0.0 ? 1.0 : clip_to_pow2(m / fmt.c_max, mode);
  }
  return out;
}

double imbalance_score(const Eigen::Ref<const Eigen::VectorXd>& hist) {
  const double uniform = 1.0 / static_cast<double>(hist.size());
  return (hist.array() - uniform).square().sum();
}

double complementarity(const Eigen::Ref<const Eigen::VectorXd>& hist_k,
                       const Eigen::Ref<const Eigen::VectorXd>& hist_l) {
  const double uniform = 1.0 / static_cast<double>(hist_k.size());
  return -((hist_k.array() - uniform) * (hist_l.array() - uniform)).sum();
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> select_pairs(
    const std::vector<Eigen::VectorXd>& hists, const IntraConfig& cfg) {
  const Eigen::Index k = static_cast<Eigen::Index>(hists.size());
  if (k < 2) return {};

  std::vector<double> h(hists.size());
  for (size_t i = 0; i < hists.size(); ++i) h[i] = imbalance_score(hists[i]);

  std::vector<Eigen::Index> order(hists.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return h[static_cast<size_t>(a)] > h[static_cast<size_t>(b)];
  });

  Eigen::Index k_top = cfg.k_top < 0 ? k / 2 : cfg.k_top;
  k_top = std::clamp<Eigen::Index>(k_top, 2, k);
  Eigen::Index budget = cfg.pairs_per_step < 0 ? k / 4 : cfg.pairs_per_step;
  budget = std::clamp<Eigen::Index>(budget, 0, k_top / 2);
  if (budget == 0) return {};

  struct Scored {
    double score;
    Eigen::Index a;  // a < b
    Eigen::Index b;
  };
  std::vector<Scored> scored;
  for (Eigen::Index i = 0; i < k_top; ++i) {
    for (Eigen::Index j = i + 1; j < k_top; ++j) {
      const Eigen::Index a = std::min(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
      const Eigen::Index b = std::max(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
      const double score = h[static_cast<size_t>(a)] + h[static_cast<size_t>(b)] +
                           cfg.lambda * complementarity(hists[static_cast<size_t>(a)],
                                                        hists[static_cast<size_t>(b)]);
      scored.push_back({score, a, b});
    }
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& x, const Scored& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });

  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  std::vector<char> used(static_cast<size_t>(k), 0);
  for (const Scored& s : scored) {
    if (static_cast<Eigen::Index>(pairs.size()) >= budget) break;
    if (used[static_cast<size_t>(s.a)] || used[static_cast<size_t>(s.b)]) continue;
    used[static_cast<size_t>(s.a)] = used[static_cast<size_t>(s.b)] = 1;
    pairs.emplace_back(s.a, s.b);
  }
  return pairs;
}

std::vector<double> critical_angles(const Eigen::Ref<const Eigen::VectorXd>& u,
                                    const Eigen::Ref<const Eigen::VectorXd>& v,
                                    const MxFormat& fmt) {
  if (u.size() != v.size()) throw ShapeError("critical_angles: size mismatch");
  std::vector<AngleEvent> events;
  collect_events(u, v, fmt, 1, events);
  std::vector<double> angles;
  angles.reserve(events.size());
  for (const AngleEvent& e : events) angles.push_back(e.angle);
  std::sort(angles.begin(), angles.end());
  std::vector<double> unique;
  for (double a : angles)
    if (unique.empty() || a - unique.back() > kAngleDedupe) unique.push_back(a);
  return unique;
}

AngleResult best_angle(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                       Eigen::Index p, Eigen::Index q, const MxFormat& fmt,
                       Eigen::Index sample_rows) {
  const Eigen::Index rows = normalized.rows();
  const Eigen::Index cols = normalized.cols();
  if (p == q || p < 0 || q < 0 || p >= cols || q >= cols)
    throw ShapeError("best_angle: invalid column pair");
  const Eigen::VectorXd u = normalized.col(p);
  const Eigen::VectorXd v = normalized.col(q);
  const int j = fmt.bins();
  const double total = static_cast<double>(normalized.size());

  // Bin counts of everything the rotation cannot move.
  std::vector<std::int64_t> base(static_cast<size_t>(j), 0);
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (c == p || c == q) continue;
    for (Eigen::Index r = 0; r < rows; ++r)
      ++base[static_cast<size_t>(magnitude_bin(normalized(r, c), fmt))];
  }

  const auto loss_at = [&](double theta) {
    std::vector<std::int64_t> counts = base;
    const double ct = std::cos(theta);
    const double st = std::sin(theta);
    for (Eigen::Index r = 0; r < rows; ++r) {
      ++counts[static_cast<size_t>(magnitude_bin(u[r] * ct + v[r] * st, fmt))];
      ++counts[static_cast<size_t>(magnitude_bin(-u[r] * st + v[r] * ct, fmt))];
    }
    return loss_from_counts(counts, total);
  };

  const double loss_zero = loss_at(0.0);

  const bool sampled = sample_rows > 0 && sample_rows < rows;
  const Eigen::Index stride = sampled ? (rows + sample_rows - 1) / sample_rows : 1;
  std::vector<AngleEvent> events;
  collect_events(u, v, fmt, stride, events);
  if (events.empty()) return {0.0, loss_zero};
  const std::vector<AngleGroup> groups = group_events(events);
  const size_t m = groups.size();

  double best_theta = 0.0;
  double best_loss = loss_zero;
  const auto consider = [&](double theta, double loss) {
    if (loss < best_loss || (loss == best_loss && theta < best_theta)) {
      best_loss = loss;
      best_theta = theta;
    }
  };

  if (sampled) {
    // Candidate set from the subsampled angle set; each candidate is priced
    // on the full data.
    for (size_t g = 0; g < m; ++g) {
      const double next = g + 1 < m ? groups[g + 1].first : groups[0].first + kTwoPi;
      const double rep = fold_angle(0.5 * (groups[g].last + next));
      consider(rep, loss_at(rep));
    }
  } else {
    // Exact sweep: walk the intervals in order, updating only the samples
    // whose bin changes at each critical angle.
    const double theta_init =
        fold_angle(0.5 * (groups[m - 1].last + groups[0].first + kTwoPi));
    std::vector<std::int32_t> bin0(static_cast<size_t>(rows));
    std::vector<std::int32_t> bin1(static_cast<size_t>(rows));
    std::vector<std::int64_t> counts = base;
    {
      const double ct = std::cos(theta_init);
      const double st = std::sin(theta_init);
      for (Eigen::Index r = 0; r < rows; ++r) {
        bin0[static_cast<size_t>(r)] = magnitude_bin(u[r] * ct + v[r] * st, fmt);
        bin1[static_cast<size_t>(r)] = magnitude_bin(-u[r] * st + v[r] * ct, fmt);
        ++counts[static_cast<size_t>(bin0[static_cast<size_t>(r)])];
        ++counts[static_cast<size_t>(bin1[static_cast<size_t>(r)])];
      }
    }
    consider(theta_init, loss_from_counts(counts, total));

    for (size_t g = 0; g < m; ++g) {
      const double next = g + 1 < m ? groups[g + 1].first : groups[0].first + kTwoPi;
      const double rep = 0.5 * (groups[g].last + next);
      const double ct = std::cos(rep);
      const double st = std::sin(rep);
      for (size_t e = groups[g].begin; e < groups[g].end; ++e) {
        const auto row = static_cast<size_t>(events[e].row);
        const Eigen::Index r = events[e].row;
        if (events[e].axis == 0) {
          const std::int32_t nb = magnitude_bin(u[r] * ct + v[r] * st, fmt);
          --counts[static_cast<size_t>(bin0[row])];
          ++counts[static_cast<size_t>(nb)];
          bin0[row] = nb;
        } else {
          const std::int32_t nb = magnitude_bin(-u[r] * st + v[r] * ct, fmt);
          --counts[static_cast<size_t>(bin1[row])];
          ++counts[static_cast<size_t>(nb)];
          bin1[row] = nb;
        }
      }
      consider(fold_angle(rep), loss_from_counts(counts, total));
    }
  }

  if (best_theta == 0.0) return {0.0, loss_zero};
  // Reprice the winner with the exact evaluator; fall back to the identity
  // angle if that ever ties or loses.
  const double final_loss = loss_at(best_theta);
  if (loss_zero <= final_loss) return {0.0, loss_zero};
  return {best_theta, final_loss};
}

RStepResult r_step(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                   const Eigen::Ref<const Eigen::MatrixXd>& rotation,
                   const IntraConfig& cfg, const MxFormat& fmt) {
  if (rotation.rows() != rotation.cols() || normalized.cols() != rotation.rows())
    throw ShapeError("r_step: rotation size does not match data width");
  Eigen::MatrixXd w = normalized * rotation;
  Eigen::MatrixXd r = rotation;

  std::vector<Eigen::VectorXd> hists;
  hists.reserve(static_cast<size_t>(w.cols()));
  for (Eigen::Index c = 0; c < w.cols(); ++c)
    hists.push_back(occupancy_histogram(w.col(c), fmt));

  for (const auto& [p, q] : select_pairs(hists, cfg)) {
    if ((w.col(p).array() == 0.0).all() && (w.col(q).array() == 0.0).all())
      continue;
    const AngleResult ar = best_angle(w, p, q, fmt, cfg.angle_sample_blocks);
    if (ar.theta == 0.0) continue;
    const double ct = std::cos(ar.theta);
    const double st = std::sin(ar.theta);
    const Eigen::VectorXd wp = w.col(p), wq = w.col(q);
    w.col(p) = ct * wp + st * wq;
    w.col(q) = -st * wp + ct * wq;
    const Eigen::VectorXd rp = r.col(p), rq = r.col(q);
    r.col(p) = ct * rp + st * rq;
    r.col(q) = -st * rp + ct * rq;
  }
  return {std::move(r), code_loss(w, fmt)};
}

IntraRotation build_intra_rotation(const Eigen::Ref<const Eigen::MatrixXd>& data,
                                   const IntraConfig& cfg, const MxFormat& fmt) {
  if (data.rows() < 1 || data.cols() < 2)
    throw ShapeError("build_intra_rotation: need at least 1 row and 2 columns");
  if (!data.allFinite())
    throw InvalidInput("build_intra_rotation: non-finite entries");

  const Eigen::Index k = data.cols();
  const int max_iter = std::max(1, cfg.max_iter);
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(k, k);

  IntraRotation out;
  double best_loss = std::numeric_limits<double>::infinity();
  double prev = 0.0;

  for (int iter = 0; iter < max_iter; ++iter) {
    const ScaleVector s = s_step(data, r, fmt, cfg.pow2_mode);
    const Eigen::MatrixXd normalized = data.array().colwise() / s.scales.array();
    const double s_loss = code_loss(normalized * r, fmt);
    out.s_step_loss.push_back(s_loss);
    if (iter == 0) {
      out.initial_loss = s_loss;
      prev = s_loss;
    }

    RStepResult rs = r_step(normalized, r, cfg, fmt);
    r = std::move(rs.rotation);
    out.loss_trace.push_back(rs.loss);
    if (rs.loss < best_loss) {
      best_loss = rs.loss;
      out.matrix = r;
      out.final_scales = s;
    }

    const double delta = prev - rs.loss;
    prev = rs.loss;
    if (delta <= cfg.epsilon_intra) break;
  }
  return out;
}

OccupancyState occupancy_state(const Eigen::Ref<const Eigen::MatrixXd>& normalized,
                               const MxFormat& fmt) {
  OccupancyState out;
  out.per_column.reserve(static_cast<size_t>(normalized.cols()));
  for (Eigen::Index c = 0; c < normalized.cols(); ++c)
    out.per_column.push_back(occupancy_histogram(normalized.col(c), fmt));
  out.global = occupancy_histogram(normalized, fmt);
  out.loss = code_loss(normalized, fmt);
  return out;
}

}  // namespace torq
