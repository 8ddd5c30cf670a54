#include "advdef/cli/manifest.hpp"

#include "advdef/core/errors.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace advdef::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

RunManifest RunManifest::open(const fs::path& run_dir, const std::string& config_hash) {
    RunManifest m;
    m.run_dir_ = run_dir;
    m.run_id_ = run_dir.filename().string();
    m.config_hash_ = config_hash;
    const auto file = run_dir / "manifest.json";
    if (!fs::exists(file)) {
        m.created_ = utc_timestamp();
        return m;
    }
    json j;
    try {
        std::ifstream in(file);
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("unreadable manifest " + file.string() + ": " + e.what());
    }
    if (j.value("config_hash", "") != config_hash) {
        throw ConfigError("run directory " + run_dir.string() + " belongs to config " +
                          j.value("config_hash", "?") + ", not " + config_hash);
    }
    m.run_id_ = j.value("run_id", m.run_id_);
    m.created_ = j.value("created", "");
    for (const auto& p : j.at("phases")) {
        PhaseRecord r;
        r.name = p.at("name").get<std::string>();
        r.complete = p.value("complete", false);
        r.started = p.value("started", "");
        r.finished = p.value("finished", "");
        r.seconds = p.value("seconds", 0.0);
        r.error = p.value("error", "");
        r.artifacts = p.value("artifacts", std::vector<std::string>{});
        r.info = p.value("info", json::object());
        m.phases_.push_back(std::move(r));
    }
    return m;
}

bool RunManifest::complete(const std::string& phase) const {
    const auto* r = find(phase);
    return r != nullptr && r->complete;
}

const PhaseRecord* RunManifest::find(const std::string& phase) const {
    for (const auto& r : phases_) {
        if (r.name == phase) {
            return &r;
        }
    }
    return nullptr;
}

void RunManifest::require(const std::string& phase) const {
    if (!complete(phase)) {
        throw MissingDependencyError(phase, "phase '" + phase + "' has not completed in " + run_dir_.string());
    }
}

PhaseRecord& RunManifest::record(const std::string& phase) {
    for (auto& r : phases_) {
        if (r.name == phase) {
            return r;
        }
    }
    phases_.push_back(PhaseRecord{phase});
    return phases_.back();
}

void RunManifest::begin(const std::string& phase) {
    auto& r = record(phase);
    r.complete = false;
    r.started = utc_timestamp();
    r.finished.clear();
    r.error.clear();
    save();
}

void RunManifest::finish(const std::string& phase, std::vector<std::string> artifacts, json info) {
    auto& r = record(phase);
    r.complete = true;
    r.finished = utc_timestamp();
    r.artifacts = std::move(artifacts);
    r.info = std::move(info);
    if (r.info.contains("seconds")) {
        r.seconds = r.info.at("seconds").get<double>();
    }
    save();
}

void RunManifest::fail(const std::string& phase, const std::string& error) {
    auto& r = record(phase);
    r.complete = false;
    r.error = error;
    save();
}

void RunManifest::reset(const std::string& phase) {
    auto& r = record(phase);
    r.complete = false;
    save();
}

std::string RunManifest::last_good_phase() const {
    std::string best;
    std::string when;
    for (const auto& r : phases_) {
        if (r.complete && r.finished >= when) {
            best = r.name;
            when = r.finished;
        }
    }
    return best;
}

json RunManifest::to_json() const {
    json phases = json::array();
    for (const auto& r : phases_) {
        phases.push_back({{"name", r.name},
                          {"complete", r.complete},
                          {"started", r.started},
                          {"finished", r.finished},
                          {"seconds", r.seconds},
                          {"error", r.error},
                          {"artifacts", r.artifacts},
                          {"info", r.info}});
    }
    return {{"format_version", 1},
            {"run_id", run_id_},
            {"config_hash", config_hash_},
            {"created", created_},
            {"last_good_phase", last_good_phase()},
            {"phases", phases}};
}

void RunManifest::save() const {
    std::error_code ec;
    fs::create_directories(run_dir_, ec);
    const auto tmp = run_dir_ / "manifest.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) {
            throw IoError("cannot write manifest in " + run_dir_.string());
        }
        out << to_json().dump(2) << '\n';
    }
    fs::rename(tmp, run_dir_ / "manifest.json", ec);
    if (ec) {
        throw IoError("cannot replace manifest in " + run_dir_.string() + ": " + ec.message());
    }
}

}  // namespace advdef::cli
