#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace advdef::cli {

struct PhaseRecord {
    std::string name;
    bool complete = false;
    std::string started;   // UTC, ISO 8601
    std::string finished;
    double seconds = 0.0;
    std::string error;     // last failure, cleared on success
    std::vector<std::string> artifacts;  // relative to the run directory
    nlohmann::json info = nlohmann::json::object();
};

// The single record of what a run directory holds. Saved after every phase
// transition so an interrupted run resumes from the last completed phase.
class RunManifest {
public:
    // Loads run_dir/manifest.json when present, otherwise starts empty.
    // A manifest written for another config hash is a ConfigError.
    static RunManifest open(const std::filesystem::path& run_dir, const std::string& config_hash);

    const std::string& run_id() const { return run_id_; }
    const std::string& config_hash() const { return config_hash_; }
    const std::filesystem::path& run_dir() const { return run_dir_; }
    const std::vector<PhaseRecord>& phases() const { return phases_; }

    bool complete(const std::string& phase) const;
    const PhaseRecord* find(const std::string& phase) const;
    // Throws MissingDependencyError naming `phase` unless it is complete.
    void require(const std::string& phase) const;

    void begin(const std::string& phase);
    void finish(const std::string& phase, std::vector<std::string> artifacts,
                nlohmann::json info = nlohmann::json::object());
    void fail(const std::string& phase, const std::string& error);
    // Drops the completion flag so the phase reruns (--force).
    void reset(const std::string& phase);

    // Most recently finished complete phase, or "" when none.
    std::string last_good_phase() const;

    void save() const;
    nlohmann::json to_json() const;

private:
    PhaseRecord& record(const std::string& phase);

    std::filesystem::path run_dir_;
    std::string run_id_;
    std::string config_hash_;
    std::string created_;
    std::vector<PhaseRecord> phases_;
};

std::string utc_timestamp();

}  // namespace advdef::cli
