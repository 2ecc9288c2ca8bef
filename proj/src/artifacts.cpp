#include "dakit/artifacts.hpp"

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include "dakit/config.hpp"
#include "dakit/hash.hpp"
#include "dakit/version.hpp"

namespace da::artifacts {

using nlohmann::json;

namespace {

constexpr int kArtifactVersion = 1;

std::string read_file_bytes(const std::filesystem::path& path,
                            const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(what + ": cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_bytes(const std::filesystem::path& path, const std::string& text,
                      const std::string& what) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(what + ": cannot open for writing " + path.string());
  out << text;
  if (!out) throw ConfigError(what + ": write failed " + path.string());
}

void append_double(std::string& line, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  line += buf;
}

}  // namespace

std::string file_sha256(const std::filesystem::path& path) {
  return sha256_hex(read_file_bytes(path, "hash"));
}

json read_json_file(const std::filesystem::path& path, const std::string& what) {
  const std::string text = read_file_bytes(path, what);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + path.string() + ": " + e.what());
  }
}

void write_artifact(const std::filesystem::path& path, const std::string& format,
                    const json& provenance, const json& data) {
  const json body{{"data", data}, {"provenance", provenance}};
  json doc{{"format", format},
           {"version", kArtifactVersion},
           {"provenance", provenance},
           {"data", data},
           {"content_hash", sha256_hex(body.dump())}};
  write_file_bytes(path, doc.dump(1) + "\n", format);
}

json read_artifact(const std::filesystem::path& path, const std::string& format) {
  const json doc = read_json_file(path, format);
  if (!doc.is_object() || !doc.contains("format") || doc.at("format") != format) {
    throw ConfigError(format + ": " + path.string() + " is not a " + format +
                      " document");
  }
  if (!doc.contains("version") || doc.at("version").get<int>() != kArtifactVersion) {
    throw ConfigError(format + ": unsupported artifact version in " + path.string());
  }
  if (!doc.contains("provenance") || !doc.contains("data") ||
      !doc.contains("content_hash")) {
    throw ConfigError(format + ": missing sections in " + path.string());
  }
  const json body{{"data", doc.at("data")}, {"provenance", doc.at("provenance")}};
  if (sha256_hex(body.dump()) != doc.at("content_hash").get<std::string>()) {
    throw ProvenanceError(format + ": content hash mismatch in " + path.string() +
                          " (tampered or corrupt)");
  }
  return doc;
}

void write_truth(const std::filesystem::path& path,
                 const pipeline::ExperimentConfig& config,
                 std::span<const enkf::TruthTrajectory> trajectories) {
  json list = json::array();
  for (const enkf::TruthTrajectory& truth : trajectories) {
    json states = json::array();
    for (const auto& state : truth.states) states.push_back(state.components);
    list.push_back(json{{"k", truth.index}, {"states", std::move(states)}});
  }
  const json provenance{{"config", config::config_to_json(config)},
                        {"config_hash", config::config_hash(config)},
                        {"seed", config.seed},
                        {"tool_version", kToolVersion}};
  write_artifact(path, "dakit-truth", provenance,
                 json{{"trajectories", std::move(list)}});
}

TruthArtifact read_truth(const std::filesystem::path& path) {
  const json doc = read_artifact(path, "dakit-truth");
  TruthArtifact out;
  out.config = config::parse_config_text(
      doc.at("provenance").at("config").dump(), path.string() + "#config");
  out.config_hash = doc.at("provenance").at("config_hash").get<std::string>();
  if (out.config_hash != config::config_hash(out.config)) {
    throw ProvenanceError("dakit-truth: embedded config hash mismatch in " +
                          path.string());
  }
  for (const json& traj : doc.at("data").at("trajectories")) {
    enkf::TruthTrajectory truth;
    truth.spec = out.config.model;
    truth.seed = out.config.seed;
    truth.index = traj.at("k").get<int>();
    const json& states = traj.at("states");
    truth.states.reserve(states.size());
    for (std::size_t j = 0; j < states.size(); ++j) {
      dynamics::StateVector state;
      states[j].get_to(state.components);
      if (state.dim() != out.config.model.dim) {
        throw ConfigError("dakit-truth: state dimension mismatch in " +
                          path.string());
      }
      state.time_index =
          static_cast<std::int64_t>(j) * out.config.model.steps_per_window;
      truth.states.push_back(std::move(state));
    }
    out.trajectories.push_back(std::move(truth));
  }
  return out;
}

void write_dataset(const std::filesystem::path& path,
                   const pipeline::ExperimentConfig& config,
                   const std::string& truth_hash,
                   const pipeline::Dataset& dataset) {
  json list = json::array();
  for (const pipeline::TrajectoryRecords& traj : dataset.trajectories) {
    json records = json::array();
    for (const pipeline::StepRecord& r : traj.records) {
      json members = json::array();
      for (int n = 0; n < r.small_analysis_ensemble.cols(); ++n) {
        members.push_back(r.small_analysis_ensemble.column(n));
      }
      records.push_back(json{{"j", r.j},
                             {"obs_mean", r.obs_mean},
                             {"small_analysis_ensemble", std::move(members)},
                             {"small_analysis_mean", r.small_analysis_mean},
                             {"large_analysis_mean", r.large_analysis_mean},
                             {"prev_small_analysis_mean", r.prev_small_analysis_mean},
                             {"target", r.target}});
    }
    list.push_back(json{{"k", traj.k},
                        {"split", traj.is_train ? "train" : "test"},
                        {"observation_hash", traj.observation_hash},
                        {"records", std::move(records)}});
  }
  const json provenance{{"config", config::config_to_json(config)},
                        {"config_hash", config::config_hash(config)},
                        {"truth_hash", truth_hash},
                        {"seed", config.seed},
                        {"tool_version", kToolVersion}};
  write_artifact(path, "dakit-dataset", provenance,
                 json{{"trajectories", std::move(list)}});
}

DatasetArtifact read_dataset(const std::filesystem::path& path) {
  const json doc = read_artifact(path, "dakit-dataset");
  DatasetArtifact out;
  out.config = config::parse_config_text(
      doc.at("provenance").at("config").dump(), path.string() + "#config");
  out.config_hash = doc.at("provenance").at("config_hash").get<std::string>();
  out.truth_hash = doc.at("provenance").at("truth_hash").get<std::string>();
  const int d = out.config.model.dim;
  for (const json& traj : doc.at("data").at("trajectories")) {
    pipeline::TrajectoryRecords records;
    records.k = traj.at("k").get<int>();
    records.is_train = traj.at("split").get<std::string>() == "train";
    records.observation_hash = traj.at("observation_hash").get<std::string>();
    for (const json& r : traj.at("records")) {
      pipeline::StepRecord record;
      record.j = r.at("j").get<int>();
      r.at("obs_mean").get_to(record.obs_mean);
      const json& members = r.at("small_analysis_ensemble");
      record.small_analysis_ensemble =
          numerics::Matrix(d, static_cast<int>(members.size()));
      for (int n = 0; n < static_cast<int>(members.size()); ++n) {
        std::vector<double> column;
        members[n].get_to(column);
        record.small_analysis_ensemble.set_column(n, column);
      }
      r.at("small_analysis_mean").get_to(record.small_analysis_mean);
      r.at("large_analysis_mean").get_to(record.large_analysis_mean);
      r.at("prev_small_analysis_mean").get_to(record.prev_small_analysis_mean);
      r.at("target").get_to(record.target);
      records.records.push_back(std::move(record));
    }
    out.dataset.trajectories.push_back(std::move(records));
  }
  return out;
}

void write_run_csv(const std::filesystem::path& path,
                   std::span<const pipeline::TrajectorySeries> series) {
  if (series.empty()) throw ConfigError("run csv: no trajectories to write");
  const int d = static_cast<int>(series.front().truth.front().size());
  const int m = static_cast<int>(series.front().obs.front().size());
  const bool corrected = !series.front().corrected.empty();

  std::string text;
  text += "trajectory,step";
  for (int i = 0; i < d; ++i) text += ",truth_" + std::to_string(i);
  for (int i = 0; i < m; ++i) text += ",obs_" + std::to_string(i);
  for (int i = 0; i < d; ++i) text += ",analysis_" + std::to_string(i);
  if (corrected) {
    for (int i = 0; i < d; ++i) text += ",corrected_" + std::to_string(i);
  }
  text += "\n";

  for (const pipeline::TrajectorySeries& traj : series) {
    for (std::size_t j = 0; j < traj.truth.size(); ++j) {
      text += std::to_string(traj.k);
      text += ',';
      text += std::to_string(j);
      auto emit = [&](const std::vector<double>& values) {
        for (double v : values) {
          text += ',';
          append_double(text, v);
        }
      };
      emit(traj.truth[j]);
      emit(traj.obs[j]);
      emit(traj.analysis[j]);
      if (corrected) emit(traj.corrected[j]);
      text += '\n';
    }
  }
  write_file_bytes(path, text, "run csv");
}

RunCsv read_run_csv(const std::filesystem::path& path) {
  const std::string text = read_file_bytes(path, "run csv");
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("run csv: empty file " + path.string());

  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string field;
    while (std::getline(hs, field, ',')) header.push_back(field);
  }
  RunCsv out;
  int d = 0, m = 0, dc = 0;
  for (const std::string& h : header) {
    if (h.rfind("truth_", 0) == 0) ++d;
    if (h.rfind("obs_", 0) == 0) ++m;
    if (h.rfind("corrected_", 0) == 0) ++dc;
  }
  if (d == 0 || m == 0 || header.size() < 2 || header[0] != "trajectory" ||
      header[1] != "step") {
    throw ConfigError("run csv: unexpected header in " + path.string());
  }
  out.state_dim = d;
  out.obs_dim = m;
  out.has_corrected = dc > 0;
  const std::size_t expected_fields = 2 + 2 * d + m + dc;

  pipeline::TrajectorySeries* current = nullptr;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> fields;
    fields.reserve(expected_fields);
    const char* p = line.c_str();
    char* end = nullptr;
    while (*p) {
      fields.push_back(std::strtod(p, &end));
      p = end;
      if (*p == ',') ++p;
    }
    if (fields.size() != expected_fields) {
      throw ConfigError("run csv: malformed row in " + path.string());
    }
    const int k = static_cast<int>(fields[0]);
    if (current == nullptr || current->k != k) {
      out.series.emplace_back();
      current = &out.series.back();
      current->k = k;
    }
    std::size_t pos = 2;
    auto take = [&](int count) {
      std::vector<double> v(fields.begin() + pos, fields.begin() + pos + count);
      pos += count;
      return v;
    };
    current->truth.push_back(take(d));
    current->obs.push_back(take(m));
    current->analysis.push_back(take(d));
    if (out.has_corrected) current->corrected.push_back(take(dc));
  }
  if (out.series.empty()) throw ConfigError("run csv: no rows in " + path.string());
  return out;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& artifact_path) {
  std::filesystem::path p = artifact_path;
  p += ".manifest.json";
  return p;
}

void write_manifest(const std::filesystem::path& artifact_path,
                    const std::string& command, const std::string& config_hash,
                    std::uint64_t seed, const json& details,
                    std::span<const HashedFile> inputs,
                    std::span<const HashedFile> outputs, double wall_seconds) {
  json in_list = json::array();
  for (const HashedFile& f : inputs) {
    in_list.push_back(json{{"path", f.path}, {"sha256", f.sha256}});
  }
  json out_list = json::array();
  for (const HashedFile& f : outputs) {
    out_list.push_back(json{{"path", f.path}, {"sha256", f.sha256}});
  }
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  const json doc{{"format", "dakit-manifest"},
                 {"version", kArtifactVersion},
                 {"command", command},
                 {"tool_version", kToolVersion},
                 {"config_hash", config_hash},
                 {"seed", seed},
                 {"details", details},
                 {"inputs", in_list},
                 {"outputs", out_list},
                 {"created_utc", stamp},
                 {"wall_seconds", wall_seconds}};
  write_file_bytes(manifest_path_for(artifact_path), doc.dump(1) + "\n",
                   "manifest");
}

json read_manifest(const std::filesystem::path& artifact_path) {
  const auto path = manifest_path_for(artifact_path);
  const json doc = read_json_file(path, "manifest");
  if (!doc.is_object() || !doc.contains("format") ||
      doc.at("format") != "dakit-manifest") {
    throw ConfigError("manifest: " + path.string() + " is not a dakit-manifest");
  }
  return doc;
}

json machine_info() {
  json info{{"hardware_threads", std::thread::hardware_concurrency()}};
  std::ifstream cpuinfo("/proc/cpuinfo");
  std::string line;
  while (std::getline(cpuinfo, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        std::string name = line.substr(colon + 1);
        if (!name.empty() && name.front() == ' ') name.erase(0, 1);
        info["cpu_model"] = name;
      }
      break;
    }
  }
  return info;
}

}  // namespace da::artifacts
