#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <json.hpp>

#include "matprobe/dataio.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/probe.hpp"
#include "matprobe/taxonomy.hpp"

namespace httplib {
class Server;
}

namespace matprobe::service {

namespace fs = std::filesystem;

/// Looks up an environment variable; empty optional when unset.
using Environment = std::function<std::optional<std::string>(const std::string&)>;
[[nodiscard]] Environment process_environment();

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    fs::path checkpoint;
    /// When set, the checkpoint must have been trained on this taxonomy.
    std::optional<fs::path> taxonomy;
    std::optional<fs::path> properties;
    /// Lets clients probe a sample by id instead of uploading it.
    std::optional<fs::path> manifest;
    probe::McConfig mc;
    double threshold = 0.7;
    double lambda = 1.0;
    std::size_t max_upload_bytes = 32u << 20;
    std::uint64_t seed = 0;
    unsigned threads = 8;  // HTTP worker threads

    /// Threshold in (0, 1), MC settings valid, referenced files present.
    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    /// Relative paths resolve against `base_dir`.
    static ServiceConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {});
};

/*
 * Overrides config entries from MATPROBE_<KEY> variables, nested keys joined
 * by '_' (MATPROBE_PORT, MATPROBE_MC_NUM_SAMPLES). Values parse as JSON when
 * the entry is not a string, otherwise they are taken verbatim.
 */
[[nodiscard]] nlohmann::json apply_env_overrides(nlohmann::json config, const Environment& env);

/// Reads the file, applies environment overrides and validates. Paths from
/// the file are relative to its directory, paths from the environment to
/// the working directory.
[[nodiscard]] ServiceConfig load_config(const fs::path& path, const Environment& env = process_environment());

/// Everything a request reads. Never modified after construction.
struct Snapshot {
    hiergat::HierGatModel model;
    std::optional<taxonomy::PropertyTable> properties;
    std::optional<dataio::DatasetManifest> manifest;
    std::shared_ptr<const dataio::Encoder> encoder;
    std::string model_hash;
    std::string taxonomy_hash;
};

[[nodiscard]] std::shared_ptr<const Snapshot> load_snapshot(const ServiceConfig& cfg);

struct ProbeRequest {
    std::optional<std::string> image;  // encoded PNG bytes
    std::optional<std::string> sample_id;
    std::size_t x = 0;
    std::size_t y = 0;
    std::optional<double> threshold;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
};

struct Response {
    int status = 200;
    nlohmann::json body;
};

class Service {
public:
    explicit Service(ServiceConfig cfg);
    Service(ServiceConfig cfg, std::shared_ptr<const Snapshot> snapshot);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    [[nodiscard]] const ServiceConfig& config() const { return cfg_; }
    [[nodiscard]] std::shared_ptr<const Snapshot> snapshot() const;
    /// Requests already running keep the snapshot they started with.
    void swap(std::shared_ptr<const Snapshot> next);
    /// Reloads the configured files and swaps them in.
    void reload();

    [[nodiscard]] Response taxonomy() const;
    [[nodiscard]] Response properties(const std::string& id) const;
    [[nodiscard]] Response health() const;
    [[nodiscard]] Response openapi() const;
    [[nodiscard]] Response probe(const ProbeRequest& req) const;
    /// MC seed for a request that does not carry one.
    [[nodiscard]] std::uint64_t request_seed(const ProbeRequest& req) const;

    /// Binds and serves in a background thread; returns the bound port
    /// (port 0 picks a free one).
    int start(const std::string& host, int port);
    /// Binds and serves on the calling thread until stop().
    void run();
    void stop();

private:
    void install_routes();

    ServiceConfig cfg_;
    mutable std::mutex mu_;
    std::shared_ptr<const Snapshot> snapshot_;
    std::unique_ptr<httplib::Server> server_;
    std::thread worker_;
};

/// The OpenAPI-style description served at /spec.
[[nodiscard]] nlohmann::json openapi_document();

}  // namespace matprobe::service
