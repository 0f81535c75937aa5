#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "herp/cam.hpp"
#include "herp/encoder.hpp"
#include "herp/error.hpp"

namespace herp {

enum class Outcome { kMatch, kNewCluster };

inline const char* to_string(Outcome o) { return o == Outcome::kMatch ? "MATCH" : "NEW_CLUSTER"; }

inline Outcome outcome_from_string(const std::string& s) {
  if (s == "MATCH") return Outcome::kMatch;
  if (s == "NEW_CLUSTER") return Outcome::kNewCluster;
  throw InputError("unknown outcome '" + s + "'");
}

// One line of the assignment log. Cluster ids are local to their bucket.
struct Assignment {
  std::string spectrum_id;
  BucketId bucket = 0;
  ClusterId cluster = 0;
  Outcome outcome = Outcome::kNewCluster;
  std::optional<std::size_t> distance;  // empty when the bucket had no rows
  std::optional<std::string> label;

  friend bool operator==(const Assignment&, const Assignment&) = default;

  nlohmann::json to_json() const {
    nlohmann::json j{{"spectrum", spectrum_id}, {"bucket", bucket}, {"cluster", cluster}, {"outcome", to_string(outcome)}};
    j["distance"] = distance ? nlohmann::json(*distance) : nlohmann::json(nullptr);
    if (label) j["label"] = *label;
    return j;
  }

  static Assignment from_json(const nlohmann::json& j) {
    Assignment a;
    a.spectrum_id = j.at("spectrum").get<std::string>();
    a.bucket = j.at("bucket").get<BucketId>();
    a.cluster = j.at("cluster").get<ClusterId>();
    a.outcome = outcome_from_string(j.at("outcome").get<std::string>());
    if (!j.at("distance").is_null()) a.distance = j.at("distance").get<std::size_t>();
    if (j.contains("label") && !j.at("label").is_null()) a.label = j.at("label").get<std::string>();
    return a;
  }
};

// A query waiting in, or dispatched from, a bucket FIFO.
struct QueryRecord {
  std::string spectrum_id;
  BucketId bucket = 0;
  Hypervector hv;
  std::uint64_t seq = 0;  // arrival order
  std::optional<std::string> label;
};

}  // namespace herp
