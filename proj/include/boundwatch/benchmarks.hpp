#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "boundwatch/gaussian.hpp"

namespace boundwatch {

// ---------------------------------------------------------------------------
// Benchmark families. Environments are value records; an episode is a single
// primitive evaluation, so the horizon collapses to one decision.
// ---------------------------------------------------------------------------

enum class Family { PrimitiveNav, SmoothQuadratic };

struct PrimitiveNavSpec {
  int k_primitives = 7;     // lateral offsets evenly spaced in [-1, 1]
  int depth_bins = 24;      // bins across the field of view
  double fov = 2.0943951023931953;  // 120 degrees
  double d_thresh = 0.5;    // cost saturation radius
  double obstacle_radius = 0.05;
  double sensor_range = 2.0;
  double path_length = 1.2;
  int path_points = 64;
  int horizon = 1;
};

struct SmoothQuadraticSpec {
  int dim = 4;
  double beta = 4.0;  // cost = clamp(||w - e||^2 / beta, 0, 1)
};

struct BenchmarkSpec {
  Family family = Family::SmoothQuadratic;
  PrimitiveNavSpec nav;
  SmoothQuadraticSpec quad;
};

// Policy weight-vector length: quadratic family uses w directly; navigation
// flattens the score map [W (K x B), bias (K)] into K*(B+1) entries.
std::size_t policy_dim(const BenchmarkSpec& spec);

struct Box {
  double x_lo = 0.0, x_hi = 1.0;
  double y_lo = -0.5, y_hi = 0.5;

  bool operator==(const Box&) const = default;
};

struct PrimitiveNavDist {
  int obstacle_count = 9;
  // Height of the obstacle-free corridor guaranteed to exist somewhere in the
  // box; environments get harder as it shrinks.
  double min_gap = 0.18;
  Box position_box{0.6429, 1.0, -0.5, 0.5};
  double haze = 0.0;  // nuisance: fog factor compressing rendered depth

  bool operator==(const PrimitiveNavDist&) const = default;
};

struct SmoothQuadraticDist {
  std::vector<double> center{0.5, 0.5, 0.5, 0.5};
  double spread = 0.5;
  double obs_noise = 0.0;  // nuisance channel; never read by the cost

  bool operator==(const SmoothQuadraticDist&) const = default;
};

using EnvDistributionParams = std::variant<PrimitiveNavDist, SmoothQuadraticDist>;

struct PrimitiveNavEnv {
  std::vector<double> obstacle_x;
  std::vector<double> obstacle_y;
  double gap_center = 0.0;  // y of the guaranteed free corridor
  double haze = 0.0;
};

struct SmoothQuadraticEnv {
  std::vector<double> target;
  double nuisance = 0.0;
};

using Environment = std::variant<PrimitiveNavEnv, SmoothQuadraticEnv>;

struct EnvironmentDataset {
  EnvDistributionParams params;
  std::vector<Environment> environments;
  std::uint64_t seed = 0;

  std::size_t size() const { return environments.size(); }
};

struct EpisodeResult {
  double cost = 0.0;
  double min_distance = 0.0;   // navigation only
  int chosen_primitive = -1;   // navigation only
  std::vector<double> score_vector;  // softmax inputs, kept for the baselines
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// i.i.d. environments under the family's generative rule; per-environment
// seeds are derived from `seed` up front so results never depend on
// evaluation order. Throws on size == 0.
EnvironmentDataset sample_dataset(const EnvDistributionParams& params,
                                  std::size_t size, std::uint64_t seed);

Environment sample_environment(const EnvDistributionParams& params,
                               std::uint64_t env_seed);

// Total function: runs one episode and reports cost in [0,1] plus the
// baseline score vector (navigation family).
EpisodeResult rollout(const BenchmarkSpec& spec, const Environment& env,
                      const WeightSample& policy);

// Mean episode cost over the dataset. Throws on an empty dataset.
double dataset_cost(const BenchmarkSpec& spec, const EnvironmentDataset& dataset,
                    const WeightSample& policy);

struct OracleEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::uint64_t samples = 0;
};

// Monte-Carlo ground truth for the expected cost under `params`; used only to
// validate certificates and to place sweep cells on the cost-gap axis.
OracleEstimate expected_cost_oracle(const BenchmarkSpec& spec,
                                    const EnvDistributionParams& params,
                                    const WeightSample& policy,
                                    std::uint64_t samples, std::uint64_t seed);

// Cost-irrelevant distribution shift: navigation gains sensor haze (fog that
// compresses every depth reading), the quadratic family gains an observation
// noise channel the cost never reads. Geometry and targets are untouched.
EnvDistributionParams nuisance_shift(const EnvDistributionParams& params);

// ---------------------------------------------------------------------------
// Prepared evaluation cache. Rendering and per-primitive distances depend
// only on the environment, so datasets evaluated against many weight vectors
// (training, sweeps) are prepared once. episode() agrees exactly with
// rollout(): both run the same code path.
// ---------------------------------------------------------------------------

class PreparedDataset {
 public:
  PreparedDataset(const BenchmarkSpec& spec, const EnvironmentDataset& dataset);

  std::size_t size() const { return count_; }
  const BenchmarkSpec& spec() const { return spec_; }
  double cost(std::size_t env_index, const WeightSample& policy) const;
  EpisodeResult episode(std::size_t env_index, const WeightSample& policy) const;
  double mean_cost(const WeightSample& policy) const;

  // Family-specific views used by training and the prior fit.
  const SmoothQuadraticEnv& quad_env(std::size_t env_index) const;
  const std::vector<double>& nav_observation(std::size_t env_index) const;
  const std::vector<double>& nav_clearances(std::size_t env_index) const;

 private:
  friend EpisodeResult rollout(const BenchmarkSpec&, const Environment&,
                               const WeightSample&);
  struct NavEnv {
    std::vector<double> obs;        // rendered depth profile, haze applied
    std::vector<double> prim_dmin;  // geometric clearance per primitive
  };
  PreparedDataset() = default;
  static NavEnv prepare_nav(const PrimitiveNavSpec& spec,
                            const PrimitiveNavEnv& env);
  EpisodeResult nav_episode(const NavEnv& env, const WeightSample& policy) const;

  BenchmarkSpec spec_;
  std::size_t count_ = 0;
  std::vector<NavEnv> nav_envs_;
  std::vector<const SmoothQuadraticEnv*> quad_envs_;
  std::vector<SmoothQuadraticEnv> quad_storage_;
};

// One row per environment: id, family parameters, episode cost under the
// named policy.
void export_dataset_csv(const BenchmarkSpec& spec,
                        const EnvironmentDataset& dataset,
                        const WeightSample& policy,
                        const std::string& policy_name,
                        const std::string& path);

// JSON round-trip for configs and result manifests.
std::string to_json(const BenchmarkSpec& spec);
BenchmarkSpec benchmark_from_json(const std::string& text);
std::string to_json(const EnvDistributionParams& params);
EnvDistributionParams dist_params_from_json(const std::string& text);

}  // namespace boundwatch
