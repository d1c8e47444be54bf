#include "boundwatch/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "boundwatch/format.hpp"
#include "boundwatch/kernels.hpp"
#include "boundwatch/threads.hpp"

namespace boundwatch {

namespace {

constexpr double kNavHazeShift = 0.35;
constexpr double kQuadObsNoiseShift = 1.0;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double primitive_offset(const PrimitiveNavSpec& spec, int k) {
  if (spec.k_primitives <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(k) /
                    static_cast<double>(spec.k_primitives - 1);
}

// Depth along the bin's center ray to the nearest obstacle surface,
// sensor_range when nothing is hit.
double ray_depth(const PrimitiveNavSpec& spec, const PrimitiveNavEnv& env,
                 double angle) {
  const double ux = std::cos(angle);
  const double uy = std::sin(angle);
  double depth = spec.sensor_range;
  const double r2 = spec.obstacle_radius * spec.obstacle_radius;
  for (std::size_t j = 0; j < env.obstacle_x.size(); ++j) {
    const double cx = env.obstacle_x[j];
    const double cy = env.obstacle_y[j];
    const double tc = ux * cx + uy * cy;
    if (tc <= 0.0) continue;
    const double c2 = cx * cx + cy * cy;
    const double disc = r2 - (c2 - tc * tc);
    if (disc < 0.0) continue;
    double t = tc - std::sqrt(disc);
    if (t < 0.0) t = 0.0;  // sensor inside the obstacle
    if (t < depth) depth = t;
  }
  return depth;
}

void check_quad_dims(const SmoothQuadraticSpec& spec,
                     const SmoothQuadraticEnv& env, const WeightSample& policy) {
  if (env.target.size() != static_cast<std::size_t>(spec.dim) ||
      policy.weights.size() != static_cast<std::size_t>(spec.dim))
    throw std::invalid_argument("rollout: quadratic dimension mismatch");
}

void require_keys(const nlohmann::json& j,
                  std::initializer_list<const char*> allowed,
                  const char* ctx) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument(std::string(ctx) + ": unknown key '" +
                                  item.key() + "'");
  }
}

}  // namespace

std::size_t policy_dim(const BenchmarkSpec& spec) {
  if (spec.family == Family::SmoothQuadratic)
    return static_cast<std::size_t>(spec.quad.dim);
  return static_cast<std::size_t>(spec.nav.k_primitives) *
         (static_cast<std::size_t>(spec.nav.depth_bins) + 1);
}

Environment sample_environment(const EnvDistributionParams& params,
                               std::uint64_t env_seed) {
  Rng rng(env_seed);
  if (const auto* nav = std::get_if<PrimitiveNavDist>(&params)) {
    PrimitiveNavEnv env;
    env.haze = nav->haze;
    const Box& box = nav->position_box;
    const double height = box.y_hi - box.y_lo;
    const double gap = std::min(std::max(nav->min_gap, 0.0), height);
    // A corridor of this height is kept free of obstacle centers; everything
    // else fills uniformly. Obstacle y is drawn over the corridor complement
    // by inverse transform, so no rejection loop can fail.
    env.gap_center =
        rng.uniform(box.y_lo + 0.5 * gap, box.y_hi - 0.5 * gap);
    const double free_len = height - gap;
    const double lower_len = (env.gap_center - 0.5 * gap) - box.y_lo;
    env.obstacle_x.reserve(nav->obstacle_count);
    env.obstacle_y.reserve(nav->obstacle_count);
    for (int j = 0; j < nav->obstacle_count && free_len > 0.0; ++j) {
      const double x = rng.uniform(box.x_lo, box.x_hi);
      const double u = rng.uniform(0.0, free_len);
      const double y =
          u < lower_len ? box.y_lo + u : env.gap_center + 0.5 * gap + (u - lower_len);
      env.obstacle_x.push_back(x);
      env.obstacle_y.push_back(y);
    }
    return env;
  }
  const auto& quad = std::get<SmoothQuadraticDist>(params);
  SmoothQuadraticEnv env;
  env.target.resize(quad.center.size());
  for (std::size_t i = 0; i < env.target.size(); ++i)
    env.target[i] = quad.center[i] + quad.spread * rng.normal();
  env.nuisance = quad.obs_noise * rng.normal();
  return env;
}

EnvironmentDataset sample_dataset(const EnvDistributionParams& params,
                                  std::size_t size, std::uint64_t seed) {
  if (size == 0) throw std::invalid_argument("sample_dataset: size must be > 0");
  EnvironmentDataset out;
  out.params = params;
  out.seed = seed;
  out.environments.resize(size);
  for (std::size_t i = 0; i < size; ++i)
    out.environments[i] = sample_environment(params, derive_seed(seed, i));
  return out;
}

PreparedDataset::NavEnv PreparedDataset::prepare_nav(
    const PrimitiveNavSpec& spec, const PrimitiveNavEnv& env) {
  NavEnv prepared;
  const int bins = spec.depth_bins;
  prepared.obs.resize(bins);
  for (int b = 0; b < bins; ++b) {
    const double angle =
        -0.5 * spec.fov + (static_cast<double>(b) + 0.5) * spec.fov / bins;
    const double depth = ray_depth(spec, env, angle);
    // Haze compresses the reported depth like fog: readings shrink, geometry
    // (and with it every primitive clearance) is untouched.
    prepared.obs[b] = (1.0 - env.haze) * depth;
  }

  prepared.prim_dmin.resize(spec.k_primitives);
  const auto& ops = kernels::active();
  const std::size_t n_obst = env.obstacle_x.size();
  for (int k = 0; k < spec.k_primitives; ++k) {
    if (n_obst == 0) {
      prepared.prim_dmin[k] = spec.sensor_range;
      continue;
    }
    const double end_x = spec.path_length;
    const double end_y = primitive_offset(spec, k);
    double min_sq = std::numeric_limits<double>::infinity();
    const int points = spec.path_points;
    for (int i = 0; i < points; ++i) {
      const double t = static_cast<double>(i) / (points - 1);
      const double d2 = ops.min_sq_point_dist(
          t * end_x, t * end_y, env.obstacle_x.data(), env.obstacle_y.data(),
          n_obst);
      if (d2 < min_sq) min_sq = d2;
    }
    double clearance = std::sqrt(min_sq) - spec.obstacle_radius;
    if (clearance < 0.0) clearance = 0.0;
    if (clearance > spec.sensor_range) clearance = spec.sensor_range;
    prepared.prim_dmin[k] = clearance;
  }
  return prepared;
}

EpisodeResult PreparedDataset::nav_episode(const NavEnv& env,
                                           const WeightSample& policy) const {
  const auto& spec = spec_.nav;
  const std::size_t bins = static_cast<std::size_t>(spec.depth_bins);
  const std::size_t k_count = static_cast<std::size_t>(spec.k_primitives);
  if (policy.weights.size() != k_count * (bins + 1))
    throw std::invalid_argument("rollout: navigation policy dimension mismatch");

  EpisodeResult result;
  result.score_vector.resize(k_count);
  const auto& ops = kernels::active();
  const double* bias = policy.weights.data() + k_count * bins;
  for (std::size_t k = 0; k < k_count; ++k) {
    result.score_vector[k] =
        ops.dot(policy.weights.data() + k * bins, env.obs.data(), bins) +
        bias[k];
  }
  // lowest index wins ties
  std::size_t best = 0;
  for (std::size_t k = 1; k < k_count; ++k)
    if (result.score_vector[k] > result.score_vector[best]) best = k;

  result.chosen_primitive = static_cast<int>(best);
  result.min_distance = env.prim_dmin[best];
  result.cost = std::max(0.0, 1.0 - result.min_distance / spec.d_thresh);
  return result;
}

PreparedDataset::PreparedDataset(const BenchmarkSpec& spec,
                                 const EnvironmentDataset& dataset)
    : spec_(spec), count_(dataset.size()) {
  if (spec.family == Family::PrimitiveNav) {
    nav_envs_.resize(count_);
    parallel_for(count_, [&](std::size_t i) {
      nav_envs_[i] = prepare_nav(
          spec_.nav, std::get<PrimitiveNavEnv>(dataset.environments[i]));
    });
  } else {
    quad_storage_.reserve(count_);
    for (const auto& env : dataset.environments)
      quad_storage_.push_back(std::get<SmoothQuadraticEnv>(env));
    quad_envs_.reserve(count_);
    for (const auto& env : quad_storage_) quad_envs_.push_back(&env);
  }
}

EpisodeResult PreparedDataset::episode(std::size_t env_index,
                                       const WeightSample& policy) const {
  if (env_index >= count_)
    throw std::out_of_range("PreparedDataset::episode: index out of range");
  if (spec_.family == Family::PrimitiveNav)
    return nav_episode(nav_envs_[env_index], policy);
  const auto& env = *quad_envs_[env_index];
  check_quad_dims(spec_.quad, env, policy);
  EpisodeResult result;
  const double q = kernels::active().sq_dist(policy.weights.data(),
                                             env.target.data(),
                                             env.target.size()) /
                   spec_.quad.beta;
  result.cost = clamp01(q);
  return result;
}

double PreparedDataset::cost(std::size_t env_index,
                             const WeightSample& policy) const {
  return episode(env_index, policy).cost;
}

const SmoothQuadraticEnv& PreparedDataset::quad_env(std::size_t env_index) const {
  if (spec_.family != Family::SmoothQuadratic)
    throw std::logic_error("quad_env: quadratic family only");
  return *quad_envs_.at(env_index);
}

const std::vector<double>& PreparedDataset::nav_observation(
    std::size_t env_index) const {
  if (spec_.family != Family::PrimitiveNav)
    throw std::logic_error("nav_observation: navigation family only");
  return nav_envs_.at(env_index).obs;
}

const std::vector<double>& PreparedDataset::nav_clearances(
    std::size_t env_index) const {
  if (spec_.family != Family::PrimitiveNav)
    throw std::logic_error("nav_clearances: navigation family only");
  return nav_envs_.at(env_index).prim_dmin;
}

double PreparedDataset::mean_cost(const WeightSample& policy) const {
  if (count_ == 0) throw std::invalid_argument("mean_cost: empty dataset");
  std::vector<double> costs(count_);
  for (std::size_t i = 0; i < count_; ++i) costs[i] = cost(i, policy);
  return kernels::active().sum(costs.data(), count_) /
         static_cast<double>(count_);
}

EpisodeResult rollout(const BenchmarkSpec& spec, const Environment& env,
                      const WeightSample& policy) {
  if (spec.family == Family::PrimitiveNav) {
    PreparedDataset single;
    single.spec_ = spec;
    single.count_ = 1;
    return single.nav_episode(
        PreparedDataset::prepare_nav(spec.nav, std::get<PrimitiveNavEnv>(env)),
        policy);
  }
  const auto& quad_env = std::get<SmoothQuadraticEnv>(env);
  check_quad_dims(spec.quad, quad_env, policy);
  EpisodeResult result;
  const double q = kernels::active().sq_dist(policy.weights.data(),
                                             quad_env.target.data(),
                                             quad_env.target.size()) /
                   spec.quad.beta;
  result.cost = clamp01(q);
  return result;
}

double dataset_cost(const BenchmarkSpec& spec, const EnvironmentDataset& dataset,
                    const WeightSample& policy) {
  if (dataset.size() == 0)
    throw std::invalid_argument("dataset_cost: empty dataset");
  return PreparedDataset(spec, dataset).mean_cost(policy);
}

OracleEstimate expected_cost_oracle(const BenchmarkSpec& spec,
                                    const EnvDistributionParams& params,
                                    const WeightSample& policy,
                                    std::uint64_t samples, std::uint64_t seed) {
  if (samples < 1)
    throw std::invalid_argument("expected_cost_oracle: samples must be >= 1");
  std::vector<double> costs(samples);
  parallel_for(samples, [&](std::size_t i) {
    const Environment env = sample_environment(params, derive_seed(seed, i));
    costs[i] = rollout(spec, env, policy).cost;
  });
  const auto& ops = kernels::active();
  const double n = static_cast<double>(samples);
  const double mean = ops.sum(costs.data(), samples) / n;
  OracleEstimate est;
  est.estimate = mean;
  est.samples = samples;
  if (samples > 1) {
    const double sumsq = ops.dot(costs.data(), costs.data(), samples);
    const double var = std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0));
    est.std_error = std::sqrt(var / n);
  }
  return est;
}

EnvDistributionParams nuisance_shift(const EnvDistributionParams& params) {
  if (const auto* nav = std::get_if<PrimitiveNavDist>(&params)) {
    PrimitiveNavDist shifted = *nav;
    shifted.haze = kNavHazeShift;
    return shifted;
  }
  SmoothQuadraticDist shifted = std::get<SmoothQuadraticDist>(params);
  shifted.obs_noise = kQuadObsNoiseShift;
  return shifted;
}

void export_dataset_csv(const BenchmarkSpec& spec,
                        const EnvironmentDataset& dataset,
                        const WeightSample& policy,
                        const std::string& policy_name,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset csv: " + path);
  out << "id,params,policy,cost\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& env = dataset.environments[i];
    std::string params;
    if (const auto* nav = std::get_if<PrimitiveNavEnv>(&env)) {
      for (std::size_t j = 0; j < nav->obstacle_x.size(); ++j) {
        if (j) params += ';';
        params += fmt_double(nav->obstacle_x[j]) + ':' +
                  fmt_double(nav->obstacle_y[j]);
      }
    } else {
      const auto& quad = std::get<SmoothQuadraticEnv>(env);
      for (std::size_t j = 0; j < quad.target.size(); ++j) {
        if (j) params += ';';
        params += fmt_double(quad.target[j]);
      }
    }
    out << fmt_u64(derive_seed(dataset.seed, i)) << ',' << params << ','
        << policy_name << ',' << fmt_double(rollout(spec, env, policy).cost)
        << '\n';
  }
}

std::string to_json(const BenchmarkSpec& spec) {
  nlohmann::json j;
  if (spec.family == Family::PrimitiveNav) {
    j["family"] = "PrimitiveNav";
    j["k_primitives"] = spec.nav.k_primitives;
    j["depth_bins"] = spec.nav.depth_bins;
    j["fov"] = spec.nav.fov;
    j["d_thresh"] = spec.nav.d_thresh;
    j["obstacle_radius"] = spec.nav.obstacle_radius;
    j["sensor_range"] = spec.nav.sensor_range;
    j["path_length"] = spec.nav.path_length;
    j["path_points"] = spec.nav.path_points;
    j["horizon"] = spec.nav.horizon;
  } else {
    j["family"] = "SmoothQuadratic";
    j["dim"] = spec.quad.dim;
    j["beta"] = spec.quad.beta;
  }
  return j.dump();
}

BenchmarkSpec benchmark_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  BenchmarkSpec spec;
  const auto family = j.at("family").get<std::string>();
  if (family == "PrimitiveNav") {
    require_keys(j,
                 {"family", "k_primitives", "depth_bins", "fov", "d_thresh",
                  "obstacle_radius", "sensor_range", "path_length",
                  "path_points", "horizon"},
                 "benchmark");
    spec.family = Family::PrimitiveNav;
    auto& nav = spec.nav;
    if (j.contains("k_primitives")) nav.k_primitives = j["k_primitives"].get<int>();
    if (j.contains("depth_bins")) nav.depth_bins = j["depth_bins"].get<int>();
    if (j.contains("fov")) nav.fov = j["fov"].get<double>();
    if (j.contains("d_thresh")) nav.d_thresh = j["d_thresh"].get<double>();
    if (j.contains("obstacle_radius"))
      nav.obstacle_radius = j["obstacle_radius"].get<double>();
    if (j.contains("sensor_range")) nav.sensor_range = j["sensor_range"].get<double>();
    if (j.contains("path_length")) nav.path_length = j["path_length"].get<double>();
    if (j.contains("path_points")) nav.path_points = j["path_points"].get<int>();
    if (j.contains("horizon")) nav.horizon = j["horizon"].get<int>();
    if (nav.k_primitives < 1 || nav.depth_bins < 1 || nav.path_points < 2 ||
        nav.d_thresh <= 0.0 || nav.sensor_range <= 0.0)
      throw std::invalid_argument("benchmark: invalid navigation settings");
  } else if (family == "SmoothQuadratic") {
    require_keys(j, {"family", "dim", "beta"}, "benchmark");
    spec.family = Family::SmoothQuadratic;
    if (j.contains("dim")) spec.quad.dim = j["dim"].get<int>();
    if (j.contains("beta")) spec.quad.beta = j["beta"].get<double>();
    if (spec.quad.dim < 1 || spec.quad.beta <= 0.0)
      throw std::invalid_argument("benchmark: invalid quadratic settings");
  } else {
    throw std::invalid_argument("benchmark: unknown family '" + family + "'");
  }
  return spec;
}

std::string to_json(const EnvDistributionParams& params) {
  nlohmann::json j;
  if (const auto* nav = std::get_if<PrimitiveNavDist>(&params)) {
    j["family"] = "PrimitiveNav";
    j["obstacle_count"] = nav->obstacle_count;
    j["min_gap"] = nav->min_gap;
    j["position_box"] = {nav->position_box.x_lo, nav->position_box.x_hi,
                         nav->position_box.y_lo, nav->position_box.y_hi};
    j["haze"] = nav->haze;
  } else {
    const auto& quad = std::get<SmoothQuadraticDist>(params);
    j["family"] = "SmoothQuadratic";
    j["center"] = quad.center;
    j["spread"] = quad.spread;
    j["obs_noise"] = quad.obs_noise;
  }
  return j.dump();
}

EnvDistributionParams dist_params_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto family = j.at("family").get<std::string>();
  if (family == "PrimitiveNav") {
    require_keys(j, {"family", "obstacle_count", "min_gap", "position_box", "haze"},
                 "distribution");
    PrimitiveNavDist nav;
    if (j.contains("obstacle_count"))
      nav.obstacle_count = j["obstacle_count"].get<int>();
    if (j.contains("min_gap")) nav.min_gap = j["min_gap"].get<double>();
    if (j.contains("position_box")) {
      const auto box = j["position_box"].get<std::vector<double>>();
      if (box.size() != 4)
        throw std::invalid_argument("distribution: position_box needs 4 values");
      nav.position_box = {box[0], box[1], box[2], box[3]};
    }
    if (j.contains("haze")) nav.haze = j["haze"].get<double>();
    if (nav.obstacle_count < 0 || nav.min_gap < 0.0 ||
        nav.position_box.x_hi < nav.position_box.x_lo ||
        nav.position_box.y_hi < nav.position_box.y_lo ||
        nav.haze < 0.0 || nav.haze > 1.0)
      throw std::invalid_argument("distribution: invalid navigation settings");
    return nav;
  }
  if (family == "SmoothQuadratic") {
    require_keys(j, {"family", "center", "spread", "obs_noise"}, "distribution");
    SmoothQuadraticDist quad;
    if (j.contains("center")) quad.center = j["center"].get<std::vector<double>>();
    if (j.contains("spread")) quad.spread = j["spread"].get<double>();
    if (j.contains("obs_noise")) quad.obs_noise = j["obs_noise"].get<double>();
    if (quad.center.empty() || quad.spread < 0.0 || quad.obs_noise < 0.0)
      throw std::invalid_argument("distribution: invalid quadratic settings");
    return quad;
  }
  throw std::invalid_argument("distribution: unknown family '" + family + "'");
}

}  // namespace boundwatch
