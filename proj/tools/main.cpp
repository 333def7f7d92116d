#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "convert.hpp"
#include "matprobe/dataio.hpp"
#include "matprobe/error.hpp"
#include "matprobe/eval.hpp"
#include "matprobe/fileio.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/probe.hpp"
#include "matprobe/service.hpp"
#include "matprobe/taxonomy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace matprobe;

namespace {

struct Globals {
    bool json_errors = false;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
};

fs::path asset(const std::string& name) { return fs::path(MATPROBE_ASSET_DIR) / name; }

json read_json(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

// ---- taxonomy ------------------------------------------------------------

void print_tree(const taxonomy::Taxonomy& t, const std::string& id, std::size_t depth) {
    const auto& n = t.node(id);
    std::cout << std::string(2 * depth, ' ') << n.id;
    if (n.name != n.id) std::cout << " (" << n.name << ")";
    std::cout << "\n";
    for (const auto& c : n.children) print_tree(t, c, depth + 1);
}

void add_taxonomy(CLI::App& app) {
    auto* cmd = app.add_subcommand("taxonomy", "Validate, show or consolidate a taxonomy");
    cmd->require_subcommand(1);
    auto path = std::make_shared<fs::path>(asset("taxonomy.json"));

    auto* validate = cmd->add_subcommand("validate", "Check a taxonomy (and optionally its property table)");
    validate->add_option("--taxonomy", *path, "Taxonomy JSON");
    auto props = std::make_shared<std::string>();
    validate->add_option("--properties", *props, "Property table to check against the taxonomy");
    validate->callback([path, props] {
        const auto t = taxonomy::Taxonomy::load(*path);
        if (!props->empty()) {
            const auto table = taxonomy::PropertyTable::load(*props);
            for (const auto& [id, p] : table.entries()) {
                if (!t.contains(id)) throw DataError("property entry '" + id + "' is not in the taxonomy");
            }
            std::cout << table.entries().size() << " property entries\n";
        }
        std::cout << t.leaves().size() << " material leaves\n";
    });

    auto* show = cmd->add_subcommand("show", "Print the tree");
    show->add_option("--taxonomy", *path, "Taxonomy JSON");
    auto as_json = std::make_shared<bool>(false);
    show->add_flag("--json", *as_json, "Print the canonical JSON document");
    show->callback([path, as_json] {
        const auto t = taxonomy::Taxonomy::load(*path);
        if (*as_json) {
            std::cout << t.to_json().dump(2) << "\n";
            return;
        }
        print_tree(t, t.root(), 0);
        for (std::size_t l = 0; l < t.depth(); ++l) {
            std::cout << t.level_names()[l] << ": " << t.level_members(l).size() << "\n";
        }
    });

    auto* cons = cmd->add_subcommand("consolidate", "Apply a consolidation map");
    cons->add_option("--taxonomy", *path, "Taxonomy JSON");
    auto map = std::make_shared<fs::path>(asset("consolidation.json"));
    auto out = std::make_shared<std::string>();
    auto cprops = std::make_shared<std::string>();
    auto props_out = std::make_shared<std::string>();
    cons->add_option("--map", *map, "Consolidation map JSON");
    cons->add_option("--out", *out, "Write the consolidated taxonomy here");
    cons->add_option("--properties", *cprops, "Property table to consolidate alongside");
    cons->add_option("--properties-out", *props_out, "Write the consolidated property table here");
    cons->callback([=] {
        if (props_out->empty() != cprops->empty()) throw UsageError("--properties and --properties-out go together");
        const auto t = taxonomy::Taxonomy::load(*path);
        const auto m = taxonomy::ConsolidationMap::load(*map);
        const auto c = taxonomy::consolidate(t, m);
        if (!out->empty()) write_json(*out, c.to_json());
        if (!cprops->empty()) {
            const auto table = taxonomy::consolidate_properties(taxonomy::PropertyTable::load(*cprops), t, m);
            write_json(*props_out, table.to_document());
        }
        std::cout << c.leaves().size() << " material leaves\n";
    });
}

// ---- synth / convert -----------------------------------------------------

void add_synth(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("synth", "Generate the synthetic texture dataset");
    struct Opts {
        std::string out, spec;
        std::optional<std::size_t> per_leaf, image_size;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--out", o->out, "Output directory")->required();
    cmd->add_option("--spec", o->spec, "synth.json; the built-in standard spec otherwise");
    cmd->add_option("--per-leaf", o->per_leaf, "Samples per leaf");
    cmd->add_option("--image-size", o->image_size, "Square image size");
    cmd->callback([o, &g] {
        auto spec = o->spec.empty() ? dataio::SyntheticSpec::standard()
                                    : dataio::SyntheticSpec::from_json(read_json(o->spec));
        if (o->per_leaf) spec.per_leaf = *o->per_leaf;
        if (o->image_size) spec.image_size = *o->image_size;
        if (g.seed) spec.seed = *g.seed;
        spec.validate();
        const auto d = dataio::generate_synthetic(spec, o->out);
        write_json(fs::path(o->out) / "synth.json", spec.to_json());
        std::cout << d.manifest.records.size() << " samples, " << d.taxonomy.leaves().size() << " leaves\n";
    });
}

void add_convert(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("convert", "Import a folder tree of PNG/TIFF images");
    struct Opts {
        tools::ConvertOptions c;
        std::string depth;
    };
    auto o = std::make_shared<Opts>();
    o->c.taxonomy = asset("taxonomy.json");
    cmd->add_option("--root", o->c.root, "Folder tree with one folder per class")->required();
    cmd->add_option("--mapping", o->c.mapping, "Folder -> leaf mapping JSON")->required();
    cmd->add_option("--taxonomy", o->c.taxonomy, "Taxonomy JSON");
    cmd->add_option("--out", o->c.out, "Output dataset directory")->required();
    cmd->add_option("--depth-root", o->depth, "Tree of depth rasters mirroring --root");
    cmd->add_option("--depth-scale", o->c.depth_scale, "Metres per depth TIFF unit");
    cmd->add_flag("--skip-unmapped", o->c.skip_unmapped, "Ignore class folders missing from the mapping");
    cmd->add_option("--train", o->c.train, "Training fraction")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--val", o->c.val, "Validation fraction")->check(CLI::Range(0.0, 1.0));
    cmd->callback([o, &g] {
        if (!o->depth.empty()) o->c.depth_root = o->depth;
        if (g.seed) o->c.seed = *g.seed;
        const auto m = tools::convert_folder_tree(o->c);
        std::cout << m.records.size() << " samples written to " << o->c.out.string() << "\n";
    });
}

// ---- render / features ---------------------------------------------------

dataio::RenderPlan plan_from(const json& j) {
    if (j.contains("views") || j.contains("random")) return dataio::RenderPlan::from_json(j);
    dataio::RenderPlan plan;
    plan.views.push_back(j);
    if (j.contains("seed")) plan.seed = j["seed"].get<std::uint64_t>();
    plan.validate();
    return plan;
}

void add_render(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("render", "Render novel views of a dataset");
    struct Opts {
        std::string manifest, recipe, out, merge_out;
        std::vector<std::string> splits;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--manifest", o->manifest, "Dataset manifest")->required();
    cmd->add_option("--recipe", o->recipe, "View recipe or render plan JSON")->required();
    cmd->add_option("--out", o->out, "Output directory")->required();
    cmd->add_option("--split", o->splits, "Render only these splits (repeatable)");
    cmd->add_option("--merge-out", o->merge_out, "Also write the source manifest merged with the views here");
    cmd->callback([o, &g] {
        const auto m = dataio::load_manifest(o->manifest);
        auto plan = plan_from(read_json(o->recipe));
        if (g.seed) plan.seed = *g.seed;
        dataio::RenderViewsOptions opts;
        opts.splits = o->splits;
        opts.threads = g.threads;
        const auto views = dataio::render_views(m, plan, o->out, opts);
        if (!o->merge_out.empty()) {
            auto merged = dataio::merge_manifests(m, views);
            merged.root = fs::absolute(fs::path(o->merge_out).parent_path());
            dataio::save_manifest(o->merge_out, merged);
        }
        std::cout << views.records.size() << " views rendered to " << o->out << "\n";
    });
}

void add_features(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("features", "Feature caches");
    cmd->require_subcommand(1);
    auto* build = cmd->add_subcommand("build", "Encode every record of a manifest");
    struct Opts {
        std::string manifest, out, encoder = "trivial", source = "appearance";
        bool grayscale = false, keep_going = false;
    };
    auto o = std::make_shared<Opts>();
    build->add_option("--manifest", o->manifest, "Dataset manifest")->required();
    build->add_option("--out", o->out, "Output cache (features.bin)")->required();
    build->add_option("--encoder", o->encoder, "trivial, or file:<cache> to import external features");
    build->add_option("--source", o->source, "Image to encode")->check(CLI::IsMember({"appearance", "context"}));
    build->add_flag("--grayscale", o->grayscale, "Encode luminance only");
    build->add_flag("--keep-going", o->keep_going, "Report failing records instead of aborting");
    build->callback([o, &g] {
        const auto m = dataio::load_manifest(o->manifest);
        dataio::FeatureCache cache;
        if (o->encoder.rfind("file:", 0) == 0) {
            cache = dataio::import_feature_cache(m, dataio::load_feature_cache(o->encoder.substr(5)));
        } else if (o->encoder == "trivial") {
            dataio::CacheBuildOptions opts;
            opts.abort_on_error = !o->keep_going;
            opts.grayscale = o->grayscale;
            opts.source = o->source == "context" ? dataio::ImageSource::context : dataio::ImageSource::appearance;
            opts.threads = g.threads;
            auto report = dataio::build_feature_cache(m, dataio::TrivialEncoder{}, opts);
            for (const auto& [id, msg] : report.failures) std::cerr << "failed " << id << ": " << msg << "\n";
            if (!report.failures.empty()) {
                throw DataError(std::to_string(report.failures.size()) + " records failed to encode");
            }
            cache = std::move(report.cache);
        } else {
            throw UsageError("unknown encoder '" + o->encoder + "' (trivial or file:<cache>)");
        }
        dataio::save_feature_cache(o->out, cache);
        std::cout << cache.ids.size() << " x " << cache.dim << " features (" << cache.encoder << ")\n";
    });
}

// ---- train / eval / fewshot ----------------------------------------------

struct RunConfig {
    hiergat::ModelConfig model;
    hiergat::TrainingConfig training;
};

RunConfig run_config(const std::string& path, const Globals& g) {
    RunConfig c;
    if (!path.empty()) {
        const json j = read_json(path);
        if (!j.is_object()) throw DataError(path + ": config must be an object");
        if (j.contains("model")) c.model = hiergat::ModelConfig::from_json(j["model"]);
        if (j.contains("training")) c.training = hiergat::TrainingConfig::from_json(j["training"]);
    }
    if (g.seed) c.training.seed = *g.seed;
    c.model.validate();
    return c;
}

fs::path taxonomy_for(const std::string& explicit_path, const std::string& manifest) {
    if (!explicit_path.empty()) return explicit_path;
    const fs::path p = fs::path(manifest).parent_path() / "taxonomy.json";
    if (!fs::exists(p)) throw UsageError("no --taxonomy given and " + p.string() + " does not exist");
    return p;
}

void add_train(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("train", "Train a hierarchical model on cached features");
    struct Opts {
        std::string manifest, features, config, taxonomy, out, split = "train";
        bool quiet = false;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--manifest", o->manifest, "Dataset manifest")->required();
    cmd->add_option("--features", o->features, "Feature cache")->required();
    cmd->add_option("--config", o->config, "JSON with 'model' and 'training' sections");
    cmd->add_option("--taxonomy", o->taxonomy, "Taxonomy JSON; defaults to taxonomy.json next to the manifest");
    cmd->add_option("--split", o->split, "Training split");
    cmd->add_option("--out", o->out, "Checkpoint path")->required();
    cmd->add_flag("--quiet", o->quiet, "No per-epoch loss lines");
    cmd->callback([o, &g] {
        const auto cfg = run_config(o->config, g);
        const auto t = taxonomy::Taxonomy::load(taxonomy_for(o->taxonomy, o->manifest));
        const auto m = dataio::load_manifest(o->manifest, &t);
        const auto cache = dataio::load_feature_cache(o->features, cfg.model.input_dim);
        const auto data = eval::split_dataset(m, cache, o->split);
        const bool quiet = o->quiet;
        auto model = eval::train_model(t, data, cfg.model, cfg.training, [quiet](std::size_t epoch, double loss) {
            if (!quiet) std::cerr << "epoch " << epoch + 1 << " loss " << std::setprecision(6) << loss << "\n";
        });
        model.encoder_name = cache.encoder;
        hiergat::save_model(o->out, model);
        std::cout << "trained on " << data.labels.size() << " samples, checkpoint " << o->out << "\n";
    });
}

void add_eval(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    struct Opts {
        std::string model, manifest, features, split = "test", out, csv;
        bool grayscale = false;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model, "Checkpoint")->required();
    cmd->add_option("--manifest", o->manifest, "Dataset manifest")->required();
    cmd->add_option("--features", o->features, "Feature cache; images are encoded otherwise");
    cmd->add_option("--split", o->split, "Split")->check(CLI::IsMember({"train", "val", "test", "ood"}));
    cmd->add_flag("--grayscale", o->grayscale, "Evaluate on luminance-only images");
    cmd->add_option("--out", o->out, "Report JSON");
    cmd->add_option("--csv", o->csv, "Per-sample predictions CSV");
    cmd->callback([o, &g] {
        const auto model = hiergat::load_model(o->model);
        const auto m = dataio::load_manifest(o->manifest, &model.taxonomy());
        eval::EvalReport report;
        if (!o->features.empty()) {
            if (o->grayscale) throw UsageError("--grayscale re-encodes images and cannot use --features");
            report = eval::run_eval(model, m, dataio::load_feature_cache(o->features, model.config().input_dim),
                                    o->split);
        } else {
            if (model.encoder_name != "trivial") {
                throw UsageError("checkpoint uses encoder '" + model.encoder_name + "'; pass --features");
            }
            eval::EvalOptions opts;
            opts.split = o->split;
            opts.grayscale = o->grayscale;
            opts.threads = g.threads;
            report = eval::run_eval(model, m, dataio::TrivialEncoder{}, opts);
        }
        if (!o->out.empty()) write_json(o->out, report.to_json());
        if (!o->csv.empty()) write_file_atomic(o->csv, report.predictions_csv(model.taxonomy()));
        std::cout << std::fixed << std::setprecision(4);
        std::cout << o->split << ": " << report.samples << " samples, flat accuracy " << report.flat_accuracy
                  << ", mean path distance " << report.mean_path_distance << "\n";
        for (std::size_t l = 0; l < report.level_names.size(); ++l) {
            std::cout << "  " << report.level_names[l] << " " << report.level_accuracy[l] << "\n";
        }
    });
}

void add_fewshot(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("fewshot", "Few-shot curve for one held-out leaf");
    struct Opts {
        std::string manifest, features, config, taxonomy, cls, out;
        std::vector<std::size_t> counts{1, 2, 4, 8, 16};
        std::size_t repeats = 1, finetune_epochs = 20;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--manifest", o->manifest, "Dataset manifest")->required();
    cmd->add_option("--features", o->features, "Feature cache")->required();
    cmd->add_option("--config", o->config, "JSON with 'model' and 'training' sections");
    cmd->add_option("--taxonomy", o->taxonomy, "Taxonomy JSON; defaults to taxonomy.json next to the manifest");
    cmd->add_option("--class", o->cls, "Held-out leaf id or name")->required();
    cmd->add_option("--counts", o->counts, "Comma-separated sample counts")->delimiter(',');
    cmd->add_option("--repeats", o->repeats, "Independent draws averaged per count");
    cmd->add_option("--finetune-epochs", o->finetune_epochs, "Epochs after reintroducing the class");
    cmd->add_option("--out", o->out, "Curve CSV")->required();
    cmd->callback([o, &g] {
        const auto cfg = run_config(o->config, g);
        const auto t = taxonomy::Taxonomy::load(taxonomy_for(o->taxonomy, o->manifest));
        const auto m = dataio::load_manifest(o->manifest, &t);
        const auto cache = dataio::load_feature_cache(o->features, cfg.model.input_dim);
        eval::FewShotConfig fc;
        const auto id = t.resolve(o->cls);
        if (!id) throw DataError("unknown class '" + o->cls + "'");
        fc.held_out = *id;
        fc.counts = o->counts;
        fc.repeats = o->repeats;
        fc.finetune_epochs = o->finetune_epochs;
        fc.seed = cfg.training.seed;
        fc.validate(t);
        const auto r = eval::few_shot_run(t, m, cache, cfg.model, cfg.training, fc);
        write_file_atomic(o->out, r.to_csv());
        std::cout << r.to_csv();
    });
}

// ---- probe / serve -------------------------------------------------------

void add_probe(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("probe", "Classify the material at a pixel");
    struct Opts {
        std::string model, image, properties, annotate_out, out;
        std::size_t x = 0, y = 0;
        probe::ProbeConfig cfg;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model, "Checkpoint")->required();
    cmd->add_option("--image", o->image, "PNG image")->required();
    cmd->add_option("--x", o->x, "Column")->required();
    cmd->add_option("--y", o->y, "Row")->required();
    cmd->add_option("--threshold", o->cfg.threshold, "Confidence needed to descend")->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--lambda", o->cfg.lambda, "Uncertainty penalty on the child score");
    cmd->add_option("--samples", o->cfg.mc.num_samples, "Dropout passes");
    cmd->add_option("--dropout", o->cfg.mc.dropout_rate, "Dropout rate of the passes");
    cmd->add_option("--properties", o->properties, "Property table for mechanical tags");
    cmd->add_option("--annotate-out", o->annotate_out, "Write the image with window and labels drawn in");
    cmd->add_option("--out", o->out, "Also write the result JSON here");
    cmd->callback([o, &g] {
        const auto model = hiergat::load_model(o->model);
        if (model.encoder_name != "trivial") {
            throw UsageError("checkpoint uses encoder '" + model.encoder_name + "', which cannot run here");
        }
        std::optional<taxonomy::PropertyTable> props;
        if (!o->properties.empty()) props = taxonomy::PropertyTable::load(o->properties);
        const Image img = dataio::read_png(o->image);
        auto cfg = o->cfg;
        cfg.mc.seed = g.seed.value_or(0);
        cfg.mc.threads = g.threads;
        cfg.validate();
        const auto pred =
            probe::probe(img, o->x, o->y, model, dataio::TrivialEncoder{}, props ? &*props : nullptr, cfg);
        json j = pred.to_json(model.taxonomy());
        j["seed"] = cfg.mc.seed;
        j["threshold"] = cfg.threshold;
        if (!o->out.empty()) write_json(o->out, j);
        if (!o->annotate_out.empty()) dataio::write_png(o->annotate_out, probe::annotate_image(img, pred), 8);
        std::cout << j.dump(2) << "\n";
    });
}

void add_serve(CLI::App& app, const Globals& g) {
    auto* cmd = app.add_subcommand("serve", "Run the HTTP service");
    struct Opts {
        std::string config;
        std::optional<std::string> host;
        std::optional<int> port;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--config", o->config, "Service config JSON")->required();
    cmd->add_option("--host", o->host, "Bind address (overrides the config)");
    cmd->add_option("--port", o->port, "Port, 0 for any free one (overrides the config)");
    cmd->callback([o, &g] {
        auto cfg = service::load_config(o->config);
        if (o->host) cfg.host = *o->host;
        if (o->port) cfg.port = *o->port;
        if (g.seed) cfg.seed = *g.seed;
        if (g.threads) cfg.threads = g.threads;
        cfg.validate();

        // Block the signals before any thread exists so only sigwait sees them.
        sigset_t set;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        pthread_sigmask(SIG_BLOCK, &set, nullptr);

        service::Service svc(cfg);
        const int port = svc.start(cfg.host, cfg.port);
        std::cout << "listening on http://" << cfg.host << ":" << port << std::endl;
        int sig = 0;
        sigwait(&set, &sig);
        svc.stop();
        std::cout << "stopped" << std::endl;
    });
}

const char* kind_name(ErrorKind k) {
    switch (k) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::data: return "data";
        case ErrorKind::numeric: return "numeric";
    }
    return "unknown";
}

int report(const Globals& g, int code, const char* kind, const std::string& message) {
    if (g.json_errors) {
        std::cerr << json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << "\n";
    } else {
        std::cerr << "error: " << message << "\n";
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical material classification pipeline", "matprobe"};
    app.set_version_flag("--version", MATPROBE_VERSION);
    app.require_subcommand(1);
    Globals g;
    app.add_flag("--json-errors", g.json_errors, "Print errors to stderr as JSON");
    app.add_option("--seed", g.seed, "Seed for every random choice of the subcommand");
    app.add_option("--threads", g.threads, "Worker threads, 0 for all cores");

    add_taxonomy(app);
    add_synth(app, g);
    add_convert(app, g);
    add_render(app, g);
    add_features(app, g);
    add_train(app, g);
    add_eval(app, g);
    add_fewshot(app, g);
    add_probe(app, g);
    add_serve(app, g);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report(g, 1, "usage", e.what());
    } catch (const Error& e) {
        return report(g, static_cast<int>(e.kind()), kind_name(e.kind()), e.what());
    } catch (const fs::filesystem_error& e) {
        return report(g, 2, "data", e.what());
    } catch (const json::exception& e) {
        return report(g, 2, "data", e.what());
    } catch (const std::bad_alloc&) {
        return report(g, 3, "numeric", "out of memory");
    } catch (const std::exception& e) {
        return report(g, 2, "data", e.what());
    }
    return 0;
}
