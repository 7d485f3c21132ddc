#include "nexus/qqr.hpp"

#include "nexus/csv.hpp"
#include "nexus/lp.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <thread>

namespace nexus {

std::vector<double> quantile_range(double start, double stop, double step) {
  if (!(step > 0.0) || stop < start) throw InvalidArgument("quantile range needs step > 0 and stop >= start");
  const auto count = static_cast<long>(std::floor((stop - start) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (long i = 0; i < count; ++i) out.push_back(std::round((start + static_cast<double>(i) * step) * 1e12) / 1e12);
  return out;
}

QuantileGrid QuantileGrid::central() { return {quantile_range(0.1, 0.9, 0.1), quantile_range(0.1, 0.9, 0.1)}; }
QuantileGrid QuantileGrid::fine() { return {quantile_range(0.01, 0.99, 0.01), quantile_range(0.01, 0.99, 0.01)}; }

void QuantileGrid::validate() const {
  for (const auto* axis : {&taus, &thetas}) {
    if (axis->empty()) throw InvalidArgument("quantile grid axis is empty");
    for (std::size_t i = 0; i < axis->size(); ++i) {
      const double v = (*axis)[i];
      if (!(v > 0.0 && v < 1.0)) throw InvalidArgument("quantile grid values must lie strictly inside (0, 1)");
      if (i > 0 && !(v > (*axis)[i - 1])) throw InvalidArgument("quantile grid must be strictly increasing");
    }
  }
}

double gaussian_kernel(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * std::numbers::pi); }

double empirical_quantile(const VectorX<double>& x, double theta) {
  if (x.size() < 1) throw InvalidArgument("empirical_quantile needs at least one observation");
  if (!(theta > 0.0 && theta < 1.0)) throw InvalidArgument("empirical_quantile needs theta in (0, 1)");
  std::vector<double> s(x.data(), x.data() + x.size());
  std::sort(s.begin(), s.end());
  const auto n = static_cast<long>(s.size());
  long k = std::clamp(static_cast<long>(std::ceil(theta * static_cast<double>(n))), 1L, n);
  while (k > 1 && static_cast<double>(k - 1) / static_cast<double>(n) >= theta) --k;
  while (k < n && static_cast<double>(k) / static_cast<double>(n) < theta) ++k;
  return s[static_cast<std::size_t>(k - 1)];
}

VectorX<double> ecdf_ranks(const VectorX<double>& x) {
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x(a) < x(b); });
  VectorX<double> r(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && x(order[static_cast<std::size_t>(j + 1)]) == x(order[static_cast<std::size_t>(i)])) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (Index k = i; k <= j; ++k) r(order[static_cast<std::size_t>(k)]) = avg / static_cast<double>(n);
    i = j + 1;
  }
  return r;
}

VectorX<double> kernel_weights(const VectorX<double>& x, double theta, const KernelSpec& spec) {
  if (!(spec.bandwidth > 0.0)) throw InvalidArgument("kernel bandwidth must be positive");
  if (spec.family != "gaussian") throw InvalidArgument("unsupported kernel family: " + spec.family);
  const double h = spec.bandwidth;
  VectorX<double> w(x.size());
  if (spec.locate_on == KernelLocation::RankScale) {
    const VectorX<double> f = ecdf_ranks(x);
    for (Index i = 0; i < x.size(); ++i) w(i) = gaussian_kernel((f(i) - theta) / h);
  } else {
    const double xq = empirical_quantile(x, theta);
    for (Index i = 0; i < x.size(); ++i) w(i) = gaussian_kernel((x(i) - xq) / h) / h;
  }
  if (!(w.maxCoeff() >= 1e-12)) throw DegenerateWeights("all kernel weights are below 1e-12");
  return w;
}

double weight_mass_floor(const KernelSpec& spec) {
  const double full = gaussian_kernel(0.0);
  return 5.0 * (spec.locate_on == KernelLocation::RankScale ? full : full / spec.bandwidth);
}

LocalQuantileFit local_quantile_fit(const VectorX<double>& y, const VectorX<double>& x, const MatrixX<double>& Z,
                                    double tau, double theta, const KernelSpec& spec) {
  const Index n = y.size(), q = Z.cols();
  if (x.size() != n || Z.rows() != n) throw InvalidArgument("local_quantile_fit: dimension mismatch");
  if (n <= q + 2) throw InvalidArgument("local_quantile_fit needs more observations than q + 2");
  if (!(tau > 0.0 && tau < 1.0) || !(theta > 0.0 && theta < 1.0))
    throw InvalidArgument("local_quantile_fit: tau and theta must lie in (0, 1)");

  LocalQuantileFit fit;
  fit.tau = tau;
  fit.theta = theta;
  fit.x_theta = empirical_quantile(x, theta);
  const VectorX<double> w = kernel_weights(x, theta, spec);
  fit.effective_weight_mass = w.sum();
  if (fit.effective_weight_mass < weight_mass_floor(spec))
    throw InsufficientLocalData("kernel weight mass " + csv::format(fit.effective_weight_mass) + " below floor");

  MatrixX<double> X(n, q + 2);
  X.col(0).setOnes();
  X.col(1) = x.array() - fit.x_theta;
  if (q > 0) X.rightCols(q) = Z;

  const QuantRegFit qr = weighted_quantile_regression(X, y, w, tau);
  fit.alpha = qr.coef(0);
  fit.beta = qr.coef(1);
  fit.gamma = qr.coef.tail(q);
  fit.objective = qr.objective;
  fit.lp_objective = qr.lp_objective;
  fit.converged = std::abs(qr.objective - qr.lp_objective) <= 1e-8 * std::max(1.0, std::abs(qr.objective));
  return fit;
}

MatrixX<double> QqrSurface::beta() const {
  MatrixX<double> m(static_cast<Index>(grid.taus.size()), static_cast<Index>(grid.thetas.size()));
  for (std::size_t a = 0; a < grid.taus.size(); ++a)
    for (std::size_t b = 0; b < grid.thetas.size(); ++b) {
      const auto& c = cell(a, b);
      m(static_cast<Index>(a), static_cast<Index>(b)) = c ? c->beta : std::numeric_limits<double>::quiet_NaN();
    }
  return m;
}

MatrixX<double> QqrSurface::alpha() const {
  MatrixX<double> m(static_cast<Index>(grid.taus.size()), static_cast<Index>(grid.thetas.size()));
  for (std::size_t a = 0; a < grid.taus.size(); ++a)
    for (std::size_t b = 0; b < grid.thetas.size(); ++b) {
      const auto& c = cell(a, b);
      m(static_cast<Index>(a), static_cast<Index>(b)) = c ? c->alpha : std::numeric_limits<double>::quiet_NaN();
    }
  return m;
}

QqrSurface qqr_surface(const VectorX<double>& y, const VectorX<double>& x, const MatrixX<double>& Z,
                       const QuantileGrid& grid, const KernelSpec& spec, unsigned threads) {
  grid.validate();
  if (x.size() != y.size() || Z.rows() != y.size()) throw InvalidArgument("qqr_surface: dimension mismatch");
  if (y.size() <= Z.cols() + 2) throw InvalidArgument("qqr_surface needs more observations than q + 2");
  if (!(spec.bandwidth > 0.0)) throw InvalidArgument("kernel bandwidth must be positive");

  QqrSurface s;
  s.grid = grid;
  s.kernel = spec;
  const std::size_t total = grid.taus.size() * grid.thetas.size();
  s.cells.resize(total);
  s.weight_mass.assign(total, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::string> reasons(total);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t c = next++; c < total; c = next++) {
      const std::size_t a = c / grid.thetas.size(), b = c % grid.thetas.size();
      try {
        s.weight_mass[c] = kernel_weights(x, grid.thetas[b], spec).sum();
        s.cells[c] = local_quantile_fit(y, x, Z, grid.taus[a], grid.thetas[b], spec);
      } catch (const InsufficientLocalData& e) {
        reasons[c] = std::string("InsufficientLocalData: ") + e.what();
      } catch (const DegenerateWeights& e) {
        reasons[c] = std::string("DegenerateWeights: ") + e.what();
      } catch (const CollinearLocalDesign& e) {
        reasons[c] = std::string("Unbounded: ") + e.what();
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, total));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t c = 0; c < total; ++c)
    if (!s.cells[c]) s.skipped.push_back({c / grid.thetas.size(), c % grid.thetas.size(), reasons[c]});
  return s;
}

std::vector<SkippedCell> quantile_crossings(const QqrSurface& s, double tol) {
  std::vector<SkippedCell> out;
  for (std::size_t b = 0; b < s.grid.thetas.size(); ++b) {
    std::optional<double> prev;
    for (std::size_t a = 0; a < s.grid.taus.size(); ++a) {
      const auto& c = s.cell(a, b);
      if (!c) continue;
      if (prev && c->alpha < *prev - tol) out.push_back({a, b, "alpha decreases in tau"});
      prev = c->alpha;
    }
  }
  return out;
}

QuadrantSummary quadrant_summary(const QqrSurface& s) {
  double sum[5] = {0, 0, 0, 0, 0};
  int count[5] = {0, 0, 0, 0, 0};
  for (std::size_t a = 0; a < s.grid.taus.size(); ++a)
    for (std::size_t b = 0; b < s.grid.thetas.size(); ++b) {
      const auto& c = s.cell(a, b);
      if (!c) continue;
      const double t = s.grid.taus[a], th = s.grid.thetas[b];
      auto add = [&](int k) {
        sum[k] += c->beta;
        ++count[k];
      };
      if (t < 0.5 && th < 0.5) add(0);
      if (t < 0.5 && th > 0.5) add(1);
      if (t > 0.5 && th < 0.5) add(2);
      if (t > 0.5 && th > 0.5) add(3);
      if (std::abs(t - 0.5) <= 0.1 + 1e-9 && std::abs(th - 0.5) <= 0.1 + 1e-9) add(4);
    }
  auto mean = [&](int k) { return count[k] ? sum[k] / count[k] : std::numeric_limits<double>::quiet_NaN(); };
  return {mean(0), mean(1), mean(2), mean(3), mean(4)};
}

std::string kernel_location_name(KernelLocation k) {
  return k == KernelLocation::RankScale ? "rank_scale" : "value_scale";
}

KernelLocation parse_kernel_location(const std::string& name) {
  if (name == "rank_scale") return KernelLocation::RankScale;
  if (name == "value_scale") return KernelLocation::ValueScale;
  throw InvalidArgument("unknown kernel location mode: " + name);
}

void export_surface(const QqrSurface& s, const std::filesystem::path& csv_path, const std::filesystem::path& manifest_path) {
  std::string out = "tau,theta,beta,alpha,weight_mass,skipped_flag\n";
  for (std::size_t a = 0; a < s.grid.taus.size(); ++a)
    for (std::size_t b = 0; b < s.grid.thetas.size(); ++b) {
      const auto& c = s.cell(a, b);
      const double mass = s.weight_mass[s.index(a, b)];
      out += csv::join({csv::format(s.grid.taus[a]), csv::format(s.grid.thetas[b]), c ? csv::format(c->beta) : "",
                        c ? csv::format(c->alpha) : "", std::isnan(mass) ? "" : csv::format(mass),
                        c ? "false" : "true"}) +
             "\n";
    }
  csv::write_file(csv_path, out);

  nlohmann::ordered_json j;
  j["csv"] = csv_path.filename().string();
  j["grid"] = {{"taus", s.grid.taus}, {"thetas", s.grid.thetas}};
  j["kernel"] = {{"family", s.kernel.family},
                 {"bandwidth", s.kernel.bandwidth},
                 {"locate_on", kernel_location_name(s.kernel.locate_on)}};
  j["mode"] = s.mode;
  j["bandwidth"] = s.kernel.bandwidth;
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& k : s.skipped)
    j["skipped"].push_back({{"tau", s.grid.taus[k.tau_index]}, {"theta", s.grid.thetas[k.theta_index]}, {"reason", k.reason}});
  csv::write_file(manifest_path, j.dump(2) + "\n");
}

QqrSurface read_surface(const std::filesystem::path& csv_path, const std::filesystem::path& manifest_path) {
  const auto j = nlohmann::json::parse(csv::read_file(manifest_path));
  QqrSurface s;
  s.grid.taus = j.at("grid").at("taus").get<std::vector<double>>();
  s.grid.thetas = j.at("grid").at("thetas").get<std::vector<double>>();
  s.kernel.family = j.at("kernel").at("family").get<std::string>();
  s.kernel.bandwidth = j.at("kernel").at("bandwidth").get<double>();
  s.kernel.locate_on = parse_kernel_location(j.at("kernel").at("locate_on").get<std::string>());
  s.mode = j.at("mode").get<std::string>();
  const std::size_t total = s.grid.taus.size() * s.grid.thetas.size();
  s.cells.assign(total, std::nullopt);
  s.weight_mass.assign(total, std::numeric_limits<double>::quiet_NaN());

  const csv::Table t = csv::read(csv_path);
  if (t.header != std::vector<std::string>{"tau", "theta", "beta", "alpha", "weight_mass", "skipped_flag"})
    throw IoError("unexpected surface header: " + csv_path.string());
  if (t.rows.size() != total) throw IoError("surface row count does not match the grid: " + csv_path.string());
  std::vector<std::string> reasons(total);
  for (const auto& k : j.at("skipped")) {
    const double tau = k.at("tau").get<double>(), theta = k.at("theta").get<double>();
    const auto a = static_cast<std::size_t>(std::find(s.grid.taus.begin(), s.grid.taus.end(), tau) - s.grid.taus.begin());
    const auto b = static_cast<std::size_t>(std::find(s.grid.thetas.begin(), s.grid.thetas.end(), theta) - s.grid.thetas.begin());
    if (a < s.grid.taus.size() && b < s.grid.thetas.size()) reasons[s.index(a, b)] = k.at("reason").get<std::string>();
  }
  for (std::size_t c = 0; c < total; ++c) {
    const auto& row = t.rows[c];
    const std::size_t a = c / s.grid.thetas.size(), b = c % s.grid.thetas.size();
    double tau = 0, theta = 0;
    if (row.size() != 6 || !csv::parse_double(row[0], tau) || !csv::parse_double(row[1], theta) ||
        tau != s.grid.taus[a] || theta != s.grid.thetas[b])
      throw IoError("surface row " + std::to_string(c + 2) + " does not match the grid");
    double mass;
    if (csv::parse_double(row[4], mass)) s.weight_mass[c] = mass;
    if (row[5] == "true") {
      s.skipped.push_back({a, b, reasons[c]});
      continue;
    }
    LocalQuantileFit f;
    f.tau = tau;
    f.theta = theta;
    if (!csv::parse_double(row[2], f.beta) || !csv::parse_double(row[3], f.alpha))
      throw IoError("non-numeric surface cell in " + csv_path.string());
    f.effective_weight_mass = s.weight_mass[c];
    f.converged = true;
    s.cells[c] = f;
  }
  return s;
}

}  // namespace nexus
