#include "matprobe/service.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <iostream>

#include <httplib.h>

#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::service {

using nlohmann::json;

Environment process_environment() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
}

// ---- configuration -------------------------------------------------------

void ServiceConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("service threshold must lie in (0, 1)");
    if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
    mc.validate();
    if (port < 0 || port > 65535) throw UsageError("port " + std::to_string(port) + " is out of range");
    if (max_upload_bytes == 0) throw UsageError("max_upload_bytes must be positive");
    if (threads == 0) throw UsageError("threads must be positive");
    if (checkpoint.empty()) throw UsageError("service config names no checkpoint");
    const auto opt = [](const std::optional<fs::path>& p) { return p ? &*p : nullptr; };
    for (const auto* p : {&checkpoint, opt(taxonomy), opt(properties), opt(manifest)}) {
        if (p && !fs::exists(*p)) throw DataError("configured file " + p->string() + " does not exist");
    }
}

json ServiceConfig::to_json() const {
    return {{"host", host},
            {"port", port},
            {"checkpoint", checkpoint.string()},
            {"taxonomy", taxonomy ? json(taxonomy->string()) : json(nullptr)},
            {"properties", properties ? json(properties->string()) : json(nullptr)},
            {"manifest", manifest ? json(manifest->string()) : json(nullptr)},
            {"mc", {{"dropout_rate", mc.dropout_rate}, {"num_samples", mc.num_samples}}},
            {"threshold", threshold},
            {"lambda", lambda},
            {"max_upload_bytes", max_upload_bytes},
            {"seed", seed},
            {"threads", threads}};
}

ServiceConfig ServiceConfig::from_json(const json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw DataError("service config must be a JSON object");
    ServiceConfig c;
    const auto path_of = [&](const json& v) -> std::optional<fs::path> {
        if (v.is_null() || v.get<std::string>().empty()) return std::nullopt;
        fs::path p = v.get<std::string>();
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    try {
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        if (j.contains("checkpoint")) c.checkpoint = path_of(j["checkpoint"]).value_or(fs::path{});
        if (j.contains("taxonomy")) c.taxonomy = path_of(j["taxonomy"]);
        if (j.contains("properties")) c.properties = path_of(j["properties"]);
        if (j.contains("manifest")) c.manifest = path_of(j["manifest"]);
        if (j.contains("mc")) {
            c.mc.dropout_rate = j["mc"].value("dropout_rate", c.mc.dropout_rate);
            c.mc.num_samples = j["mc"].value("num_samples", c.mc.num_samples);
        }
        c.threshold = j.value("threshold", c.threshold);
        c.lambda = j.value("lambda", c.lambda);
        c.max_upload_bytes = j.value("max_upload_bytes", c.max_upload_bytes);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw DataError(std::string("service config: ") + e.what());
    }
    return c;
}

namespace {

// Like merge_patch, but a null in the patch is kept as a value so unset keys
// stay visible to the environment override walk.
void deep_merge(json& into, const json& patch) {
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        if (it.value().is_object() && into.contains(it.key()) && into[it.key()].is_object()) {
            deep_merge(into[it.key()], it.value());
        } else {
            into[it.key()] = it.value();
        }
    }
}

void override_walk(json& node, const std::string& prefix, const Environment& env) {
    for (auto it = node.begin(); it != node.end(); ++it) {
        std::string name = prefix + "_" + it.key();
        std::transform(name.begin(), name.end(), name.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
        json& value = it.value();
        if (value.is_object()) {
            override_walk(value, name, env);
            continue;
        }
        const auto set = env(name);
        if (!set) continue;
        if (value.is_string() || value.is_null()) {
            value = *set;
            continue;
        }
        json parsed = json::parse(*set, nullptr, false);
        const bool ok = !parsed.is_discarded() &&
                        (value.is_boolean() ? parsed.is_boolean() : value.is_number() ? parsed.is_number() : true);
        if (!ok) throw UsageError(name + "='" + *set + "' does not match the type of '" + it.key() + "'");
        value = parsed;
    }
}

}  // namespace

json apply_env_overrides(json config, const Environment& env) {
    override_walk(config, "MATPROBE", env);
    return config;
}

ServiceConfig load_config(const fs::path& path, const Environment& env) {
    json file;
    try {
        file = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    // Resolve the file's own paths first so environment paths stay cwd-relative.
    const fs::path base = fs::absolute(path).parent_path();
    json merged = ServiceConfig{}.to_json();
    deep_merge(merged, ServiceConfig::from_json(file, base).to_json());
    ServiceConfig c = ServiceConfig::from_json(apply_env_overrides(merged, env), fs::current_path());
    c.validate();
    return c;
}

// ---- snapshot ------------------------------------------------------------

std::shared_ptr<const Snapshot> load_snapshot(const ServiceConfig& cfg) {
    auto model = cfg.taxonomy ? hiergat::load_model(cfg.checkpoint, taxonomy::Taxonomy::load(*cfg.taxonomy))
                              : hiergat::load_model(cfg.checkpoint);
    if (!model.trained) throw DataError("checkpoint " + cfg.checkpoint.string() + " holds an untrained model");
    std::shared_ptr<const dataio::Encoder> encoder;
    if (model.encoder_name == "trivial") {
        encoder = std::make_shared<dataio::TrivialEncoder>();
    } else {
        throw DataError("checkpoint expects encoder '" + model.encoder_name + "', which the service cannot run");
    }
    if (encoder->dim() != model.config().input_dim) {
        throw DataError("encoder dim " + std::to_string(encoder->dim()) + " does not match the model input dim " +
                        std::to_string(model.config().input_dim));
    }
    std::optional<taxonomy::PropertyTable> props;
    if (cfg.properties) props = taxonomy::PropertyTable::load(*cfg.properties);
    std::optional<dataio::DatasetManifest> manifest;
    if (cfg.manifest) manifest = dataio::load_manifest(*cfg.manifest, &model.taxonomy());
    const std::string model_hash = hex64(fnv1a(read_file(cfg.checkpoint)));
    const std::string taxonomy_hash = model.taxonomy().hash();
    return std::make_shared<const Snapshot>(
        Snapshot{std::move(model), std::move(props), std::move(manifest), std::move(encoder), model_hash, taxonomy_hash});
}

// ---- handlers ------------------------------------------------------------

namespace {

std::atomic<std::uint64_t> g_request_counter{0};

json error_body(int status, const std::string& message) {
    return {{"error", {{"status", status}, {"message", message}}}};
}

std::string correlation_id() {
    const auto now = std::chrono::steady_clock::now().time_since_epoch().count();
    return hex64(rng::derive(static_cast<std::uint64_t>(now), g_request_counter.fetch_add(1)));
}

Response internal_error(const std::string& what) {
    const std::string id = correlation_id();
    std::cerr << "[" << id << "] internal error: " << what << "\n";
    Response r{500, error_body(500, "internal error")};
    r.body["error"]["correlation_id"] = id;
    return r;
}

template <class F>
Response guarded(F&& f) {
    try {
        return f();
    } catch (const probe::CoordinateError& e) {
        return {422, error_body(422, e.what())};
    } catch (const DataError& e) {
        return {400, error_body(400, e.what())};
    } catch (const UsageError& e) {
        return {400, error_body(400, e.what())};
    } catch (const std::exception& e) {
        return internal_error(e.what());
    }
}

// Width and height from the PNG header, read before any decoding.
std::pair<std::uint32_t, std::uint32_t> png_dimensions(const std::string& bytes) {
    static const char sig[8] = {'\x89', 'P', 'N', 'G', '\r', '\n', '\x1a', '\n'};
    if (bytes.size() < 24 || !std::equal(sig, sig + 8, bytes.begin()) || bytes.compare(12, 4, "IHDR") != 0) {
        throw DataError("upload is not a PNG image");
    }
    const auto be32 = [&](std::size_t o) {
        std::uint32_t v = 0;
        for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[o + i]);
        return v;
    };
    return {be32(16), be32(20)};
}

constexpr std::uint64_t kMaxPixels = 64ull << 20;

}  // namespace

Service::Service(ServiceConfig cfg) : Service(cfg, load_snapshot(cfg)) {}

Service::Service(ServiceConfig cfg, std::shared_ptr<const Snapshot> snapshot)
    : cfg_(std::move(cfg)), snapshot_(std::move(snapshot)) {}

Service::~Service() { stop(); }

std::shared_ptr<const Snapshot> Service::snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_;
}

void Service::swap(std::shared_ptr<const Snapshot> next) {
    if (!next) throw UsageError("cannot swap in an empty snapshot");
    std::lock_guard lock(mu_);
    snapshot_ = std::move(next);
}

void Service::reload() { swap(load_snapshot(cfg_)); }

Response Service::taxonomy() const {
    return guarded([&] { return Response{200, snapshot()->model.taxonomy().to_json()}; });
}

Response Service::properties(const std::string& id) const {
    return guarded([&] {
        const auto snap = snapshot();
        const auto& t = snap->model.taxonomy();
        const auto resolved = t.resolve(id);
        if (!resolved) return Response{404, error_body(404, "unknown taxonomy node '" + id + "'")};
        const auto* p = snap->properties ? snap->properties->find(*resolved) : nullptr;
        if (!p) return Response{404, error_body(404, "no mechanical properties for '" + *resolved + "'")};
        const auto names = taxonomy::mechanical_summary(*p, taxonomy::QualityThresholds{}).names();
        return Response{200,
                        {{"id", *resolved},
                         {"name", t.node(*resolved).name},
                         {"properties", taxonomy::PropertyTable::to_json(*p)},
                         {"tags", json(std::vector<std::string>(names.begin(), names.end()))}}};
    });
}

Response Service::health() const {
    return guarded([&] {
        const auto snap = snapshot();
        return Response{200,
                        {{"status", "ok"},
                         {"version", MATPROBE_VERSION},
                         {"model_hash", snap->model_hash},
                         {"taxonomy_hash", snap->taxonomy_hash},
                         {"encoder", snap->model.encoder_name}}};
    });
}

Response Service::openapi() const { return {200, openapi_document()}; }

std::uint64_t Service::request_seed(const ProbeRequest& req) const {
    std::uint64_t h = req.image ? fnv1a(*req.image) : fnv1a("sample:" + req.sample_id.value_or(""));
    const json key = {req.x, req.y, req.threshold ? json(*req.threshold) : json(nullptr),
                      req.lambda ? json(*req.lambda) : json(nullptr)};
    h = fnv1a(key.dump(), h);
    return rng::derive(cfg_.seed, h);
}

Response Service::probe(const ProbeRequest& req) const {
    return guarded([&] {
        const auto snap = snapshot();
        if (req.image.has_value() == req.sample_id.has_value()) {
            return Response{400, error_body(400, "send exactly one of an image upload or a sample_id")};
        }
        Image img;
        if (req.image) {
            const auto [w, h] = png_dimensions(*req.image);
            if (static_cast<std::uint64_t>(w) * h > kMaxPixels) {
                return Response{413, error_body(413, "image of " + std::to_string(w) + "x" + std::to_string(h) +
                                                         " pixels exceeds the decode limit")};
            }
            img = dataio::decode_png(*req.image);
        } else {
            if (!snap->manifest) return Response{400, error_body(400, "the service has no manifest for sample ids")};
            if (!snap->manifest->contains(*req.sample_id)) {
                return Response{404, error_body(404, "unknown sample id '" + *req.sample_id + "'")};
            }
            img = dataio::read_png(snap->manifest->record(*req.sample_id).appearance);
        }
        probe::ProbeConfig pc;
        pc.mc = cfg_.mc;
        pc.mc.threads = 1;
        pc.mc.seed = req.seed ? *req.seed : request_seed(req);
        pc.threshold = req.threshold.value_or(cfg_.threshold);
        pc.lambda = req.lambda.value_or(cfg_.lambda);
        pc.validate();
        const auto pred = probe::probe(img, req.x, req.y, snap->model, *snap->encoder,
                                       snap->properties ? &*snap->properties : nullptr, pc);
        json body = pred.to_json(snap->model.taxonomy());
        body["seed"] = pc.mc.seed;
        body["threshold"] = pc.threshold;
        body["image"] = {{"width", img.width}, {"height", img.height}};
        return Response{200, body};
    });
}

// ---- HTTP ----------------------------------------------------------------

namespace {

std::uint64_t parse_unsigned(const json& v, const char* field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    if (v.is_string()) {
        const auto& s = v.get_ref<const std::string&>();
        if (!s.empty() && s.size() <= 20 && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
            try {
                return std::stoull(s);
            } catch (const std::exception&) {
            }
        }
    }
    throw UsageError(std::string("'") + field + "' must be a non-negative integer");
}

double parse_number(const json& v, const char* field) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        try {
            std::size_t used = 0;
            const double d = std::stod(v.get<std::string>(), &used);
            if (used == v.get_ref<const std::string&>().size()) return d;
        } catch (const std::exception&) {
        }
    }
    throw UsageError(std::string("'") + field + "' must be a number");
}

ProbeRequest parse_probe(const httplib::Request& http) {
    json fields = json::object();
    ProbeRequest req;
    if (http.is_multipart_form_data()) {
        for (const auto& [name, part] : http.files) {
            if (name == "image") {
                req.image = part.content;
            } else {
                fields[name] = part.content;
            }
        }
    } else {
        fields = json::parse(http.body, nullptr, false);
        if (fields.is_discarded() || !fields.is_object()) {
            throw UsageError("probe body must be multipart/form-data or a JSON object");
        }
    }
    for (const char* required : {"x", "y"}) {
        if (!fields.contains(required)) throw UsageError(std::string("missing field '") + required + "'");
    }
    req.x = parse_unsigned(fields["x"], "x");
    req.y = parse_unsigned(fields["y"], "y");
    if (fields.contains("sample_id")) {
        if (!fields["sample_id"].is_string()) throw UsageError("'sample_id' must be a string");
        req.sample_id = fields["sample_id"].get<std::string>();
    }
    if (fields.contains("threshold") && !fields["threshold"].is_null()) {
        req.threshold = parse_number(fields["threshold"], "threshold");
    }
    if (fields.contains("lambda") && !fields["lambda"].is_null()) req.lambda = parse_number(fields["lambda"], "lambda");
    if (fields.contains("seed") && !fields["seed"].is_null()) req.seed = parse_unsigned(fields["seed"], "seed");
    return req;
}

void send(httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

}  // namespace

void Service::install_routes() {
    auto& s = *server_;
    s.set_payload_max_length(cfg_.max_upload_bytes);
    const unsigned n = cfg_.threads;
    s.new_task_queue = [n] { return new httplib::ThreadPool(n); };
    s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});

    s.Get("/taxonomy", [this](const httplib::Request&, httplib::Response& res) { send(res, taxonomy()); });
    s.Get(R"(/properties/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        send(res, properties(req.matches[1]));
    });
    s.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    s.Get("/spec", [this](const httplib::Request&, httplib::Response& res) { send(res, openapi()); });
    s.Post("/probe", [this](const httplib::Request& req, httplib::Response& res) {
        ProbeRequest parsed;
        try {
            parsed = parse_probe(req);
        } catch (const std::exception& e) {
            send(res, {400, error_body(400, e.what())});
            return;
        }
        send(res, probe(parsed));
    });
    s.Post("/reload", [this](const httplib::Request&, httplib::Response& res) {
        send(res, guarded([&] {
                 reload();
                 return health();
             }));
    });
    s.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        std::string message = httplib::status_message(res.status);
        if (res.status == 404) message = "no route for " + req.method + " " + req.path;
        if (res.status == 413) message = "request body exceeds the upload limit";
        send(res, {res.status, error_body(res.status, message)});
    });
    s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "unknown exception";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send(res, internal_error(what));
    });
}

int Service::start(const std::string& host, int port) {
    stop();
    server_ = std::make_unique<httplib::Server>();
    install_routes();
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw DataError("cannot bind " + host + ":" + std::to_string(port));
    worker_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void Service::run() {
    stop();
    server_ = std::make_unique<httplib::Server>();
    install_routes();
    if (!server_->bind_to_port(cfg_.host, cfg_.port)) {
        throw DataError("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    }
    server_->listen_after_bind();
}

void Service::stop() {
    if (server_) server_->stop();
    if (worker_.joinable()) worker_.join();
}

// ---- description ---------------------------------------------------------

json openapi_document() {
    const json error_ref = {{"$ref", "#/components/schemas/Error"}};
    const auto resp = [&](const char* description, const json& schema) {
        return json{{"description", description}, {"content", {{"application/json", {{"schema", schema}}}}}};
    };
    const json errors = {{"400", resp("malformed request", error_ref)},
                         {"500", resp("internal error with correlation id", error_ref)}};
    json probe_fields = {{"type", "object"},
                         {"required", {"x", "y"}},
                         {"properties",
                          {{"image", {{"type", "string"}, {"format", "binary"}, {"description", "PNG upload"}}},
                           {"sample_id", {{"type", "string"}}},
                           {"x", {{"type", "integer"}, {"minimum", 0}}},
                           {"y", {{"type", "integer"}, {"minimum", 0}}},
                           {"threshold", {{"type", "number"}, {"minimum", 0}, {"maximum", 1}}},
                           {"lambda", {{"type", "number"}, {"minimum", 0}}},
                           {"seed", {{"type", "integer"}, {"minimum", 0}}}}}};
    json probe_responses = errors;
    probe_responses["200"] = resp("hierarchical prediction", {{"$ref", "#/components/schemas/ProbeResult"}});
    probe_responses["404"] = resp("unknown sample id", error_ref);
    probe_responses["413"] = resp("upload too large", error_ref);
    probe_responses["422"] = resp("coordinate outside the image", error_ref);
    json props_responses = errors;
    props_responses["200"] = resp("mechanical properties and tags", {{"type", "object"}});
    props_responses["404"] = resp("unknown node or no properties", error_ref);
    const auto simple = [&](const char* summary, const char* what) {
        json r = errors;
        r["200"] = resp(what, {{"type", "object"}});
        return json{{"summary", summary}, {"responses", r}};
    };
    json paths;
    paths["/taxonomy"]["get"] = simple("Taxonomy of the loaded model", "taxonomy document");
    paths["/properties/{id}"]["get"] = {
        {"summary", "Mechanical properties of a node"},
        {"parameters", {{{"name", "id"}, {"in", "path"}, {"required", true}, {"schema", {{"type", "string"}}}}}},
        {"responses", props_responses}};
    paths["/probe"]["post"] = {
        {"summary", "Probe the material at a pixel"},
        {"requestBody",
         {{"required", true},
          {"content", {{"multipart/form-data", {{"schema", probe_fields}}}, {"application/json", {{"schema", probe_fields}}}}}}},
        {"responses", probe_responses}};
    paths["/healthz"]["get"] = simple("Version and loaded hashes", "health");
    paths["/spec"]["get"] = simple("This document", "OpenAPI description");
    paths["/reload"]["post"] = simple("Reload the configured checkpoint and swap it in", "health after reload");

    json path_step = {{"type", "object"},
                      {"properties",
                       {{"id", {{"type", "string"}}},
                        {"name", {{"type", "string"}}},
                        {"level", {{"type", "string"}}},
                        {"confidence", {{"type", "number"}}}}}};
    json schemas;
    schemas["Error"] = {{"type", "object"},
                        {"properties",
                         {{"error",
                           {{"type", "object"},
                            {"properties",
                             {{"status", {{"type", "integer"}}},
                              {"message", {{"type", "string"}}},
                              {"correlation_id", {{"type", "string"}}}}}}}}}};
    schemas["ProbeResult"] = {
        {"type", "object"},
        {"required", {"path", "finest_level", "window", "tags", "entropy_per_level"}},
        {"properties",
         {{"path", {{"type", "array"}, {"items", path_step}}},
          {"finest_level", {{"type", "string"}}},
          {"window",
           {{"type", "object"},
            {"properties", {{"x", {{"type", "integer"}}}, {"y", {{"type", "integer"}}}, {"size", {{"type", "integer"}}}}}}},
          {"tags", {{"type", "array"}, {"items", {{"type", "string"}}}}},
          {"entropy_per_level", {{"type", "array"}, {"items", {{"type", "number"}}}}},
          {"seed", {{"type", "integer"}}},
          {"threshold", {{"type", "number"}}},
          {"image", {{"type", "object"}}}}}};
    return {{"openapi", "3.0.3"},
            {"info", {{"title", "matprobe"}, {"version", MATPROBE_VERSION}}},
            {"paths", paths},
            {"components", {{"schemas", schemas}}}};
}

}  // namespace matprobe::service
