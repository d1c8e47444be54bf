#include "boundwatch/certificate.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace boundwatch {

namespace {

// JSON has no +/-infinity literal; certificates with infinite divergence are
// still meaningful (vacuous bounds), so map those fields through strings.
nlohmann::json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double real_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::invalid_argument("certificate: unexpected string value '" + s + "'");
  }
  return j.get<double>();
}

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

double regularizer(double d2, std::uint64_t m, double delta) {
  if (m < 8) throw std::invalid_argument("regularizer: m must be >= 8");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("regularizer: delta must be in (0,1)");
  if (std::isnan(d2) || d2 < 0.0)
    throw std::invalid_argument("regularizer: d2 must be >= 0");
  if (std::isinf(d2)) return std::numeric_limits<double>::infinity();
  const double md = static_cast<double>(m);
  const double log_term =
      std::log(2.0) + 0.5 * std::log(md) - 3.0 * std::log(delta / 2.0);
  return (d2 + log_term) / (2.0 * md);
}

Certificate build_certificate(double empirical_cost, double d2,
                              std::uint64_t m, double delta,
                              std::uint64_t policy_seed,
                              const DiagonalGaussian& prior,
                              const DiagonalGaussian& posterior) {
  if (!(empirical_cost >= 0.0 && empirical_cost <= 1.0))
    throw std::invalid_argument(
        "build_certificate: empirical_cost must be in [0,1]");
  Certificate cert;
  cert.empirical_cost = empirical_cost;
  cert.d2 = d2;
  cert.m = m;
  cert.delta = delta;
  cert.regularizer = regularizer(d2, m, delta);
  const double root = std::sqrt(cert.regularizer);
  // Bounds deliberately unclamped: detector arithmetic needs the raw values.
  cert.upper_bound = empirical_cost + root;
  cert.lower_bound = empirical_cost - root;
  cert.policy_seed = policy_seed;
  cert.prior = prior;
  cert.posterior = posterior;
  return cert;
}

std::string Certificate::id() const {
  std::ostringstream os;
  os.precision(17);
  os << empirical_cost << '|' << d2 << '|' << m << '|' << delta << '|'
     << policy_seed;
  std::ostringstream hex;
  hex << std::hex << fnv1a(os.str());
  return hex.str();
}

std::string to_json(const Certificate& cert) {
  nlohmann::json j;
  j["schema"] = "cert_v1";
  j["empirical_cost"] = cert.empirical_cost;
  j["regularizer"] = real_to_json(cert.regularizer);
  j["upper_bound"] = real_to_json(cert.upper_bound);
  j["lower_bound"] = real_to_json(cert.lower_bound);
  j["delta"] = cert.delta;
  j["m"] = cert.m;
  j["d2"] = real_to_json(cert.d2);
  j["policy_seed"] = cert.policy_seed;
  j["prior"] = nlohmann::json::parse(to_json(cert.prior));
  j["posterior"] = nlohmann::json::parse(to_json(cert.posterior));
  j["id"] = cert.id();
  return j.dump(2);
}

Certificate certificate_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.at("schema").get<std::string>() != "cert_v1")
    throw std::invalid_argument("certificate: unsupported schema");
  Certificate cert;
  cert.empirical_cost = j.at("empirical_cost").get<double>();
  cert.regularizer = real_from_json(j.at("regularizer"));
  cert.upper_bound = real_from_json(j.at("upper_bound"));
  cert.lower_bound = real_from_json(j.at("lower_bound"));
  cert.delta = j.at("delta").get<double>();
  cert.m = j.at("m").get<std::uint64_t>();
  cert.d2 = real_from_json(j.at("d2"));
  cert.policy_seed = j.at("policy_seed").get<std::uint64_t>();
  cert.prior = gaussian_from_json(j.at("prior").dump());
  cert.posterior = gaussian_from_json(j.at("posterior").dump());
  return cert;
}

void save_certificate(const Certificate& cert, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write certificate: " + path);
  out << to_json(cert) << '\n';
}

Certificate load_certificate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read certificate: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return certificate_from_json(buf.str());
}

}  // namespace boundwatch
