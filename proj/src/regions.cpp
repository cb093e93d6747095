#include "region_gain/regions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <random>
#include <unordered_map>

#include "region_gain/parallel.hpp"

namespace region_gain {

std::string to_string(RegionKind k) {
  switch (k) {
    case RegionKind::box: return "box";
    case RegionKind::S_set: return "S_set";
    case RegionKind::sublevel: return "sublevel_U";
    case RegionKind::shell: return "shell_U";
    case RegionKind::gap: return "gap_R";
  }
  return "?";
}

Region::Region(RegionKind kind, Predicate predicate, Box bounding_box, bool degenerate)
    : kind_(kind), predicate_(std::move(predicate)), box_(std::move(bounding_box)), degenerate_(degenerate) {
  if (box_.lo.size() != box_.hi.size()) throw std::invalid_argument("bounding box corners differ in dimension");
}

Region Region::box(Box b) {
  Box copy = b;
  return Region(RegionKind::box, [b = std::move(b)](const VectorXd& y) { return b.contains(y); }, std::move(copy));
}

Region Region::S_set(const Thresholds& t, StorageFunction V, StorageFunction W, Box truncation) {
  const Eigen::Index n = V.dimension;
  const Eigen::Index m = W.dimension;
  auto pred = [t, V = std::move(V), W = std::move(W), n, m](const VectorXd& y) {
    const double v = V(VectorXd(y.head(n)));
    const double w = W(VectorXd(y.tail(m)));
    const bool first = t.M_lo <= v && v <= t.M_hi && w <= t.N_hi;
    const bool second = v <= t.M_hi && t.N_lo <= w && w <= t.N_hi;
    return first || second;
  };
  return Region(RegionKind::S_set, std::move(pred), std::move(truncation));
}

Region Region::sublevel(ScalarField U, double c, Box bounding_box) {
  return Region(RegionKind::sublevel, [U = std::move(U), c](const VectorXd& y) { return U(y) <= c; },
                std::move(bounding_box));
}

Region Region::shell(ScalarField U, double lo, double hi, Box bounding_box) {
  auto pred = [U = std::move(U), lo, hi](const VectorXd& y) {
    const double u = U(y);
    return lo <= u && u <= hi;
  };
  return Region(RegionKind::shell, std::move(pred), std::move(bounding_box), !(lo < hi));
}

Region Region::gap(ScalarField U_g, double M_tilde_g, ScalarField U_l, double M_hat_l, Box bounding_box) {
  auto pred = [U_g = std::move(U_g), U_l = std::move(U_l), M_tilde_g, M_hat_l](const VectorXd& y) {
    return U_g(y) <= M_tilde_g && U_l(y) >= M_hat_l;
  };
  return Region(RegionKind::gap, std::move(pred), std::move(bounding_box));
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<int, 16> kPrimes{2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};

double radical_inverse(std::uint64_t i, int base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % static_cast<std::uint64_t>(base));
    i /= static_cast<std::uint64_t>(base);
    f *= inv;
  }
  return r;
}

}  // namespace

std::vector<VectorXd> sample(const Region& r, std::size_t n, std::uint64_t seed, const SamplingOptions& opts) {
  const Box& box = r.bounding_box();
  if (!box.finite()) throw std::invalid_argument("sampling needs a finite bounding box");
  const Eigen::Index d = box.dim();
  if (n == 0) return {};
  if (r.degenerate()) throw EmptyRegionError("region has zero measure (" + to_string(r.kind()) + ")");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const VectorXd width = box.hi - box.lo;
  bool halton = false;
  std::uint64_t halton_index = 1 + seed % 4096;

  std::vector<VectorXd> out;
  out.reserve(n);
  std::size_t proposed = 0, rejected = 0;
  constexpr std::size_t kBatch = 4096;
  std::vector<VectorXd> batch(kBatch, VectorXd(d));
  std::vector<char> accept(kBatch);

  while (out.size() < n) {
    for (auto& y : batch) {
      for (Eigen::Index k = 0; k < d; ++k) {
        const double u = halton ? radical_inverse(halton_index, kPrimes[static_cast<std::size_t>(k) % kPrimes.size()])
                                : unit(rng);
        y[k] = box.lo[k] + u * width[k];
      }
      if (halton) ++halton_index;
    }
    parallel_chunks(kBatch, [&](std::size_t b, std::size_t e, std::size_t) {
      for (std::size_t i = b; i < e; ++i) accept[i] = r.contains(batch[i]) ? 1 : 0;
    });
    for (std::size_t i = 0; i < kBatch && out.size() < n; ++i) {
      ++proposed;
      if (accept[i])
        out.push_back(batch[i]);
      else if (++rejected >= opts.max_rejections)
        throw EmptyRegionError("no sample accepted in " + std::to_string(rejected) + " proposals (" +
                               to_string(r.kind()) + ")");
    }
    if (!halton && proposed >= opts.probe_proposals &&
        static_cast<double>(out.size()) < opts.min_acceptance * static_cast<double>(proposed))
      halton = true;
  }
  return out;
}

Box sublevel_bounding_box(const ScalarField& f, double c, Eigen::Index dim, double start) {
  if (dim < 1) throw std::invalid_argument("bounding box needs a positive dimension");
  std::mt19937_64 rng(12345);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  // Fixed surface probes of the unit cube: for dim <= 2 a dense perimeter,
  // otherwise random points pushed to a random face.
  std::vector<VectorXd> probes;
  if (dim == 1) {
    probes = {VectorXd::Constant(1, -1.0), VectorXd::Constant(1, 1.0)};
  } else {
    const int count = dim == 2 ? 1024 : 4096;
    for (int i = 0; i < count; ++i) {
      VectorXd p(dim);
      for (Eigen::Index k = 0; k < dim; ++k) p[k] = unit(rng);
      const auto face = static_cast<Eigen::Index>(i % (2 * dim));
      p[face / 2] = face % 2 == 0 ? -1.0 : 1.0;
      if (dim == 2) p[1 - face / 2] = -1.0 + 2.0 * (i / 4) / (count / 4 - 1.0);
      probes.push_back(std::move(p));
    }
  }
  double R = start;
  for (int it = 0; it <= 40; ++it, R *= 2.0) {
    bool outside = true;
    for (const auto& p : probes)
      if (f(VectorXd(R * p)) <= c) {
        outside = false;
        break;
      }
    if (outside) return Box::cube(dim, R);
  }
  throw EvaluationError("sublevel set at c=" + std::to_string(c) + " is not bounded within the search range");
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::size_t kMaxCounterexamples = 16;

void record(InclusionCheck& c, const VectorXd& y, double margin) {
  ++c.n_samples;
  c.worst_margin = std::min(c.worst_margin, margin);
  if (margin < 0.0) {
    ++c.violations;
    if (c.counterexamples.size() < kMaxCounterexamples) c.counterexamples.push_back(y);
  }
}

// Samples of {phi <= c} in R^dim; the origin when c == 0.
std::vector<VectorXd> factor_samples(const StorageFunction& phi, double c, std::size_t n, std::uint64_t seed) {
  if (c == 0.0) return {VectorXd::Zero(phi.dimension)};
  const Box b = sublevel_bounding_box(phi.value, c, phi.dimension);
  return sample(Region::sublevel(phi.value, c, b), n, seed);
}

}  // namespace

InclusionReport check_inclusion_chain(const Thresholds& t, const StorageFunction& V, const StorageFunction& W,
                                      const MergedLyapunov& U, std::size_t n_samples, std::uint64_t seed,
                                      const Box& box) {
  const Eigen::Index n = V.dimension, m = W.dimension;
  InclusionReport r;
  r.inner.name = "inner";
  r.middle.name = "middle";
  r.outer.name = "outer";
  r.upper_implication.name = "upper_implication";
  r.lower_implication.name = "lower_implication";
  const ScalarField Uf = U.as_field();

  auto stack = [n, m](const VectorXd& x, const VectorXd& z) {
    VectorXd y(n + m);
    y << x, z;
    return y;
  };

  // Inner: product of the two lower sublevel sets, paired factor samples.
  {
    if (!std::isfinite(t.M_lo) || !std::isfinite(t.N_lo)) throw std::invalid_argument("lower thresholds must be finite");
    const auto xs = factor_samples(V, t.M_lo, n_samples, seed);
    const auto zs = factor_samples(W, t.N_lo, n_samples, seed + 1);
    const std::size_t count = std::max(xs.size(), zs.size());
    for (std::size_t i = 0; i < count; ++i) {
      const VectorXd y = stack(xs[i % xs.size()], zs[i % zs.size()]);
      record(r.inner, y, t.M_tilde - Uf(y));
    }
  }

  // Middle and outer: sublevel sets of U.
  auto sublevel_samples = [&](double c, std::uint64_t s) {
    if (c == 0.0) return std::vector<VectorXd>{VectorXd::Zero(n + m)};
    Box b = box;
    // A non-proper U has unbounded sublevel sets; those are sampled inside `box`.
    if (std::isfinite(c)) {
      try {
        b = sublevel_bounding_box(Uf, c, n + m);
      } catch (const EvaluationError&) {
      }
    }
    return sample(Region::sublevel(Uf, c, b), n_samples, s);
  };

  if (std::isinf(t.M_hat)) {
    r.middle.trivial = true;
  } else {
    for (const auto& y : sublevel_samples(t.M_tilde, seed + 2)) record(r.middle, y, t.M_hat - Uf(y));
  }

  if (std::isinf(t.M_hi) && std::isinf(t.N_hi)) {
    r.outer.trivial = true;
  } else {
    for (const auto& y : sublevel_samples(t.M_hat, seed + 3)) {
      const double v = V(VectorXd(y.head(n))), w = W(VectorXd(y.tail(m)));
      record(r.outer, y, std::min(t.M_hi - v, t.N_hi - w));
    }
  }

  // Diagnostics on plain box samples.
  const auto diag = sample(Region::box(box), n_samples, seed + 4);
  const double upper_bound = std::min(t.M_hi, t.N_hi);
  const double lower_bound = std::max(t.M_lo, t.N_lo);
  for (const auto& y : diag) {
    const double u = Uf(y);
    const double v = V(VectorXd(y.head(n))), w = W(VectorXd(y.tail(m)));
    if (u <= t.M_hat) record(r.upper_implication, y, upper_bound - std::max(v, w));
    if (u >= t.M_tilde) record(r.lower_implication, y, std::min(v, w) - lower_bound);
  }
  return r;
}

// ---------------------------------------------------------------------------

double Polyline::signed_area() const {
  double a = 0.0;
  const std::size_t k = vertices.size();
  for (std::size_t i = 0; i < k; ++i) {
    const auto& p = vertices[i];
    const auto& q = vertices[(i + 1) % k];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

double Polyline::perimeter() const {
  double len = 0.0;
  const std::size_t k = vertices.size();
  for (std::size_t i = 0; i < k; ++i) len += (vertices[(i + 1) % k] - vertices[i]).norm();
  return len;
}

namespace {

struct Segment {
  std::int64_t a, b;  // global edge ids
};

}  // namespace

std::vector<Polyline> trace_level_curves(const ScalarField& U, double level, const Box& box, int cells_x,
                                         int cells_y) {
  if (box.dim() != 2) throw std::invalid_argument("level curves are traced in the plane only");
  if (cells_x < 2 || cells_y < 2) throw std::invalid_argument("contour grid needs at least 2x2 cells");
  const int nx = cells_x + 1, ny = cells_y + 1;
  const double dx = (box.hi[0] - box.lo[0]) / cells_x;
  const double dy = (box.hi[1] - box.lo[1]) / cells_y;
  auto node = [&](int i, int j) { return Eigen::Vector2d(box.lo[0] + i * dx, box.lo[1] + j * dy); };

  std::vector<double> f(static_cast<std::size_t>(nx) * ny);
  parallel_chunks(static_cast<std::size_t>(ny), [&](std::size_t b, std::size_t e, std::size_t) {
    VectorXd y(2);
    for (std::size_t j = b; j < e; ++j)
      for (int i = 0; i < nx; ++i) {
        y = node(i, static_cast<int>(j));
        f[j * nx + i] = U(y) - level;
      }
  });
  auto val = [&](int i, int j) { return f[static_cast<std::size_t>(j) * nx + i]; };
  auto inside = [&](int i, int j) { return val(i, j) < 0.0; };

  // Edge ids: 2*(j*nx+i) is the horizontal edge to (i+1, j), +1 the vertical
  // edge to (i, j+1).
  auto h_edge = [&](int i, int j) { return 2 * (static_cast<std::int64_t>(j) * nx + i); };
  auto v_edge = [&](int i, int j) { return 2 * (static_cast<std::int64_t>(j) * nx + i) + 1; };
  auto edge_point = [&](std::int64_t id) {
    const std::int64_t base = id / 2;
    const int i = static_cast<int>(base % nx), j = static_cast<int>(base / nx);
    const int i2 = id % 2 == 0 ? i + 1 : i, j2 = id % 2 == 0 ? j : j + 1;
    const double f0 = val(i, j), f1 = val(i2, j2);
    const double t = f0 == f1 ? 0.5 : f0 / (f0 - f1);
    return Eigen::Vector2d(node(i, j) + std::clamp(t, 0.0, 1.0) * (node(i2, j2) - node(i, j)));
  };
  auto on_boundary = [&](std::int64_t id) {
    const std::int64_t base = id / 2;
    const int i = static_cast<int>(base % nx), j = static_cast<int>(base / nx);
    if (id % 2 == 0) return j == 0 || j == ny - 1;
    return i == 0 || i == nx - 1;
  };

  std::vector<Segment> segs;
  for (int j = 0; j < cells_y; ++j)
    for (int i = 0; i < cells_x; ++i) {
      const int code = (inside(i, j) ? 1 : 0) | (inside(i + 1, j) ? 2 : 0) | (inside(i + 1, j + 1) ? 4 : 0) |
                       (inside(i, j + 1) ? 8 : 0);
      if (code == 0 || code == 15) continue;
      const std::int64_t bottom = h_edge(i, j), top = h_edge(i, j + 1);
      const std::int64_t left = v_edge(i, j), right = v_edge(i + 1, j);
      const double centre = 0.25 * (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1));
      switch (code) {
        case 1: case 14: segs.push_back({left, bottom}); break;
        case 2: case 13: segs.push_back({bottom, right}); break;
        case 3: case 12: segs.push_back({left, right}); break;
        case 4: case 11: segs.push_back({right, top}); break;
        case 6: case 9: segs.push_back({bottom, top}); break;
        case 7: case 8: segs.push_back({left, top}); break;
        case 5:  // corners 0 and 2 inside
          if (centre < 0.0) {
            segs.push_back({left, top});
            segs.push_back({bottom, right});
          } else {
            segs.push_back({left, bottom});
            segs.push_back({right, top});
          }
          break;
        case 10:  // corners 1 and 3 inside
          if (centre < 0.0) {
            segs.push_back({left, bottom});
            segs.push_back({right, top});
          } else {
            segs.push_back({left, top});
            segs.push_back({bottom, right});
          }
          break;
        default: break;
      }
    }
  if (segs.empty())
    throw ContourError(ContourError::Kind::none, "no contour at level " + std::to_string(level) + " in the box");

  std::unordered_map<std::int64_t, std::vector<std::size_t>> by_edge;
  by_edge.reserve(segs.size() * 2);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    by_edge[segs[s].a].push_back(s);
    by_edge[segs[s].b].push_back(s);
  }
  for (const auto& [edge, list] : by_edge)
    if (list.size() < 2 || on_boundary(edge))
      throw ContourError(ContourError::Kind::open,
                         "level " + std::to_string(level) + " reaches the box boundary; enlarge the box");

  std::vector<char> used(segs.size(), 0);
  std::vector<Polyline> out;
  for (std::size_t s0 = 0; s0 < segs.size(); ++s0) {
    if (used[s0]) continue;
    Polyline p;
    const std::int64_t start = segs[s0].a;
    std::int64_t edge = segs[s0].b;
    std::size_t cur = s0;
    used[s0] = 1;
    p.vertices.push_back(edge_point(start));
    while (edge != start) {
      p.vertices.push_back(edge_point(edge));
      const auto& list = by_edge[edge];
      std::size_t next = list[0] == cur ? list[1] : list[0];
      if (used[next]) break;
      used[next] = 1;
      edge = segs[next].a == edge ? segs[next].b : segs[next].a;
      cur = next;
    }
    // Drop repeated points created when the level passes through a node.
    std::vector<Eigen::Vector2d> clean;
    for (const auto& v : p.vertices)
      if (clean.empty() || (v - clean.back()).norm() > 1e-12 * (1.0 + v.norm())) clean.push_back(v);
    while (clean.size() > 1 && (clean.front() - clean.back()).norm() <= 1e-12 * (1.0 + clean.front().norm()))
      clean.pop_back();
    if (clean.size() < 3) continue;
    p.vertices = std::move(clean);
    if (p.signed_area() < 0.0) std::reverse(p.vertices.begin(), p.vertices.end());
    out.push_back(std::move(p));
  }

  const double h = 0.25 * std::min(dx, dy);
  for (auto& p : out) {
    const std::size_t k = p.vertices.size();
    p.normals.resize(k);
    VectorXd y(2);
    for (std::size_t i = 0; i < k; ++i) {
      const Eigen::Vector2d& v = p.vertices[i];
      Eigen::Vector2d g;
      for (int c = 0; c < 2; ++c) {
        y = v;
        y[c] += h;
        const double up = U(y);
        y[c] -= 2.0 * h;
        g[c] = (up - U(y)) / (2.0 * h);
      }
      if (g.norm() > 1e-12) {
        p.normals[i] = g.normalized();
      } else {
        const Eigen::Vector2d tan = p.vertices[(i + 1) % k] - p.vertices[(i + k - 1) % k];
        p.normals[i] = Eigen::Vector2d(tan.y(), -tan.x()).normalized();
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Polyline& a, const Polyline& b) { return a.signed_area() > b.signed_area(); });
  return out;
}

Polyline trace_level_curve(const ScalarField& U, double level, const Box& box, int cells_x, int cells_y) {
  auto all = trace_level_curves(U, level, box, cells_x, cells_y);
  if (all.empty())
    throw ContourError(ContourError::Kind::none, "no closed contour at level " + std::to_string(level));
  return std::move(all.front());
}

void write_polyline_csv(std::ostream& out, const Polyline& p) {
  out << "s_index,y1,y2,n1,n2\n";
  out.precision(12);
  for (std::size_t i = 0; i < p.vertices.size(); ++i)
    out << i << ',' << p.vertices[i].x() << ',' << p.vertices[i].y() << ',' << p.normals[i].x() << ','
        << p.normals[i].y() << '\n';
}

}  // namespace region_gain
