#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dakit/pipeline.hpp"

namespace da::artifacts {

std::string file_sha256(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path,
                              const std::string& what);

// Wrapped JSON artifact layout: { format, version, provenance, data,
// content_hash } where content_hash = sha256 over the compact dump of
// { "data": ..., "provenance": ... }. Readers recompute and reject
// mismatches.
void write_artifact(const std::filesystem::path& path, const std::string& format,
                    const nlohmann::json& provenance, const nlohmann::json& data);
nlohmann::json read_artifact(const std::filesystem::path& path,
                             const std::string& format);

struct TruthArtifact {
  pipeline::ExperimentConfig config;
  std::string config_hash;
  std::vector<enkf::TruthTrajectory> trajectories;
};

void write_truth(const std::filesystem::path& path,
                 const pipeline::ExperimentConfig& config,
                 std::span<const enkf::TruthTrajectory> trajectories);
TruthArtifact read_truth(const std::filesystem::path& path);

struct DatasetArtifact {
  pipeline::ExperimentConfig config;
  std::string config_hash;
  std::string truth_hash;
  pipeline::Dataset dataset;
};

void write_dataset(const std::filesystem::path& path,
                   const pipeline::ExperimentConfig& config,
                   const std::string& truth_hash, const pipeline::Dataset& dataset);
DatasetArtifact read_dataset(const std::filesystem::path& path);

// Time-series CSV, one row per (trajectory, step):
// trajectory,step,truth_*,obs_*,analysis_*[,corrected_*], doubles printed
// with %.17g.
void write_run_csv(const std::filesystem::path& path,
                   std::span<const pipeline::TrajectorySeries> series);

struct RunCsv {
  std::vector<pipeline::TrajectorySeries> series;
  int state_dim = 0;
  int obs_dim = 0;
  bool has_corrected = false;
};

RunCsv read_run_csv(const std::filesystem::path& path);

struct HashedFile {
  std::string path;
  std::string sha256;
};

// Sidecar manifest at <artifact>.manifest.json. Carries wall-clock metadata
// and is the one byproduct exempt from byte-identical re-runs.
void write_manifest(const std::filesystem::path& artifact_path,
                    const std::string& command, const std::string& config_hash,
                    std::uint64_t seed, const nlohmann::json& details,
                    std::span<const HashedFile> inputs,
                    std::span<const HashedFile> outputs, double wall_seconds);

std::filesystem::path manifest_path_for(const std::filesystem::path& artifact_path);
nlohmann::json read_manifest(const std::filesystem::path& artifact_path);

nlohmann::json machine_info();

}  // namespace da::artifacts
