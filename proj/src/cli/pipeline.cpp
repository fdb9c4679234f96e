#include "qpm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>

#include "qpm/error.hpp"
#include "qpm/jsonutil.hpp"

namespace qpm {

namespace {

Scenario load_scenario(const RunConfig& c) {
    if (c.scenario_file.empty()) return Scenario(c.scenario);
    return Scenario(ScenarioSpec::load(c.scenario_file));
}

stl::Formula load_formula(const RunConfig& c, const Scenario& sc) {
    if (!c.formula.empty()) {
        try {
            return stl::parse_formula(c.formula, sc.state_dim());
        } catch (const ParseError& e) {
            throw ConfigError("formula", e.what());
        }
    }
    const std::string id = c.property.empty() ? sc.spec().default_property : c.property;
    if (!sc.spec().properties.contains(id)) throw ConfigError("property", "scenario has no property '" + id + "'");
    return sc.property(id);
}

std::string key_of(const std::string& text) { return content_hash(text); }

std::string widths(const std::vector<std::size_t>& v) {
    std::string s;
    for (auto w : v) s += std::to_string(w) + ",";
    return s;
}

void require(const std::filesystem::path& p, const std::string& hint) {
    if (!std::filesystem::exists(p)) throw IoError("missing " + p.string() + "; run `qpm " + hint + "` first");
}

void make_dirs(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::create_directories(p, ec);
    if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Pipeline::Pipeline(RunConfig cfg, std::ostream& out, std::ostream& log)
    : cfg_(std::move(cfg)), scenario_(load_scenario(cfg_)), phi_(load_formula(cfg_, scenario_)), out_(out),
      log_(log) {
    cfg_.scenario = scenario_.id();
    cfg_.validate();
    cfg_.resolve_paths();
}

std::string Pipeline::property_name() const {
    if (!cfg_.formula.empty()) return "inline";
    return cfg_.property.empty() ? scenario_.spec().default_property : cfg_.property;
}

std::string Pipeline::dataset_key() const {
    std::ostringstream o;
    o << "dataset\n" << scenario_.spec().to_kv() << cfg_.sizes.train << ' ' << cfg_.sizes.cal_states << ' '
      << cfg_.sizes.cal_per_state << ' ' << cfg_.sizes.test_states << ' ' << cfg_.sizes.test_per_state << ' '
      << cfg_.seeds.dataset;
    return key_of(o.str());
}

std::string Pipeline::surrogate_key() const {
    std::ostringstream o;
    if (cfg_.surrogate == SurrogateKind::resample) {
        o << "resample " << dataset_key() << ' ' << cfg_.k_nn;
    } else {
        const auto& a = cfg_.arch;
        const auto& t = cfg_.train;
        o << "diffusion " << dataset_key() << ' ' << widths(a.hidden) << ' '
          << (a.prediction == Prediction::x0 ? "x0" : "eps") << ' ' << a.embed_dim << ' ' << a.cond_frequencies << ' '
          << a.steps << ' ' << format_double(a.beta_first) << ' ' << format_double(a.beta_last) << ' ' << t.epochs
          << ' ' << t.batch << ' ' << format_double(t.lr) << ' ' << format_double(t.ema_decay) << ' '
          << cfg_.seeds.training;
    }
    return key_of(o.str());
}

std::string Pipeline::predictor_key() const {
    if (cfg_.predictor == PredictorKind::exact) return key_of("exact " + to_string(scenario_.id()));
    const auto& c = cfg_.classifier;
    std::ostringstream o;
    o << "classifier " << dataset_key() << ' ' << c.epochs << ' ' << format_double(c.lr) << ' '
      << format_double(c.holdout) << ' ' << widths(c.hidden) << ' ' << cfg_.seeds.training;
    return key_of(o.str());
}

std::string Pipeline::calibration_key() const {
    std::ostringstream o;
    o << "calibration " << dataset_key() << ' ' << surrogate_key() << ' ' << predictor_key() << ' '
      << phi_.to_string() << ' ' << format_double(cfg_.alpha) << ' ' << cfg_.k << ' ' << cfg_.seeds.calibration;
    return key_of(o.str());
}

std::string Pipeline::report_key() const {
    std::ostringstream o;
    o << "report " << calibration_key() << ' ' << cfg_.rounds << ' ' << cfg_.cal_draw << ' ' << cfg_.replacement
      << ' ' << cfg_.seeds.test;
    return key_of(o.str());
}

std::filesystem::path Pipeline::dataset_dir() const {
    return cfg_.data_dir / (to_string(scenario_.id()) + "-" + dataset_key());
}

std::filesystem::path Pipeline::split_path(Split s) const { return dataset_dir() / (to_string(s) + ".jsonl"); }

std::filesystem::path Pipeline::diffusion_path() const {
    return cfg_.checkpoint_dir / ("diffusion-" + surrogate_key() + ".ckpt");
}

std::filesystem::path Pipeline::classifier_path() const {
    return cfg_.checkpoint_dir / ("classifier-" + predictor_key() + ".ckpt");
}

std::filesystem::path Pipeline::calibration_path() const {
    return cfg_.checkpoint_dir / ("calibration-" + calibration_key() + ".json");
}

std::filesystem::path Pipeline::report_path() const {
    return cfg_.report_dir / ("report-" + report_key() + ".json");
}

void Pipeline::write_config(const std::filesystem::path& artifact) const {
    auto p = artifact;
    p.replace_extension(".cfg");
    atomic_write(p, cfg_.to_kv());
}

void Pipeline::check_horizon() const {
    if (phi_.lookahead() + 1 > scenario_.horizon())
        throw HorizonError("property needs " + std::to_string(phi_.lookahead() + 1) + " states, scenario horizon is " +
                           std::to_string(scenario_.horizon()));
}

DatasetTriple Pipeline::generate() {
    const auto t0 = std::chrono::steady_clock::now();
    auto data = generate_dataset(scenario_, cfg_.sizes, cfg_.seeds.dataset);
    const auto dir = dataset_dir();
    make_dirs(dir);
    nlohmann::json manifest = {{"scenario", to_string(scenario_.id())},
                               {"dataset_key", dataset_key()},
                               {"seeds", {{"dataset", cfg_.seeds.dataset}}}};
    for (const Dataset* d : {&data.train, &data.calibration, &data.test}) {
        write_jsonl(*d, split_path(d->split));
        manifest["splits"][to_string(d->split)] = {{"file", split_path(d->split).filename().string()},
                                                   {"states", d->group_count()},
                                                   {"per_state", d->per_state},
                                                   {"records", d->size()}};
    }
    atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
    write_config(dir / "config.cfg");
    out_ << manifest.dump(2) << "\n";
    log_ << "generated " << dir.string() << " in " << seconds_since(t0) << " s\n";
    return data;
}

Dataset Pipeline::load_split(Split s) const {
    const auto p = split_path(s);
    require(p, "generate");
    return read_jsonl(p);
}

std::shared_ptr<const Surrogate> Pipeline::load_surrogate() const {
    if (cfg_.surrogate == SurrogateKind::resample)
        return std::make_shared<ResampleSurrogate>(load_split(Split::train), cfg_.k_nn);
    require(diffusion_path(), "train");
    return std::make_shared<DiffusionModel>(DiffusionModel::load(diffusion_path()));
}

std::shared_ptr<const ModePredictor> Pipeline::load_predictor() const {
    if (cfg_.predictor == PredictorKind::exact) return std::make_shared<ExactPredictor>(scenario_);
    require(classifier_path(), "train");
    return std::make_shared<ModeClassifier>(ModeClassifier::load(classifier_path()));
}

void Pipeline::train() {
    const Dataset data = load_split(Split::train);
    make_dirs(cfg_.checkpoint_dir);
    nlohmann::json manifest = {{"dataset_key", dataset_key()}, {"seeds", {{"training", cfg_.seeds.training}}}};

    if (cfg_.surrogate == SurrogateKind::diffusion) {
        const auto t0 = std::chrono::steady_clock::now();
        DiffusionModel model(scenario_.state_dim(), scenario_.horizon(), cfg_.arch, cfg_.seeds.training);
        TrainHyper hyper = cfg_.train;
        hyper.seed = cfg_.seeds.training;
        const std::size_t every = std::max<std::size_t>(1, hyper.epochs / 10);
        const auto losses = model.train(data, hyper, Exec::parallel, [&](std::size_t epoch, double loss) {
            if ((epoch + 1) % every == 0) log_ << "diffusion epoch " << epoch + 1 << " loss " << loss << "\n";
        });
        model.save(diffusion_path());
        write_config(diffusion_path());
        manifest["surrogate"] = {{"kind", "diffusion"},
                                 {"checkpoint", diffusion_path().filename().string()},
                                 {"checkpoint_hash", model.checkpoint_hash()},
                                 {"epochs", hyper.epochs},
                                 {"batch", hyper.batch},
                                 {"lr", hyper.lr},
                                 {"ema_decay", hyper.ema_decay},
                                 {"final_loss", losses.empty() ? nlohmann::json() : json_number(losses.back())},
                                 {"seconds", seconds_since(t0)}};
        out_ << "diffusion final loss " << (losses.empty() ? std::string("n/a") : format_double(losses.back()))
             << "\n";
    } else {
        manifest["surrogate"] = {{"kind", "resample"}, {"k_nn", cfg_.k_nn}, {"pool", data.size()}};
        out_ << "resample surrogate: nothing to train (k_nn " << cfg_.k_nn << ", pool " << data.size() << ")\n";
    }

    if (cfg_.predictor == PredictorKind::learned) {
        ClassifierHyper hyper = cfg_.classifier;
        hyper.seed = cfg_.seeds.training;
        ClassifierFit fit;
        auto clf = ModeClassifier::train(data.trajectories, data.modes, scenario_.mode_count(), hyper, &fit);
        for (const auto& w : fit.warnings) log_ << "classifier warning: " << w << "\n";
        clf.save(classifier_path());
        write_config(classifier_path());
        const double acc = fit.accuracy_trace.empty() ? 0.0 : fit.accuracy_trace.back();
        manifest["classifier"] = {{"checkpoint", classifier_path().filename().string()},
                                  {"checkpoint_hash", clf.checkpoint_hash()},
                                  {"epochs", hyper.epochs},
                                  {"lr", hyper.lr},
                                  {"holdout_accuracy", acc},
                                  {"final_loss", fit.loss_trace.empty() ? nlohmann::json() : json_number(fit.loss_trace.back())}};
        out_ << "classifier final loss "
             << (fit.loss_trace.empty() ? std::string("n/a") : format_double(fit.loss_trace.back()))
             << ", holdout accuracy " << acc << "\n";
    }

    const auto path =
        cfg_.checkpoint_dir / ("train-" + key_of(surrogate_key() + " " + predictor_key()) + ".json");
    atomic_write(path, manifest.dump(2) + "\n");
    write_config(path);
    out_ << manifest.dump(2) << "\n";
}

CalibrationRecord Pipeline::calibrate() {
    check_horizon();
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset cal = load_split(Split::calibration);
    make_dirs(cfg_.data_dir / "cache");
    SampleCache cache(cfg_.data_dir / "cache");
    auto mon = build_monitor(load_surrogate(), load_predictor(), cal, phi_, property_name(), cfg_.alpha, cfg_.k,
                             cfg_.seeds.calibration, Exec::parallel, &cache);
    make_dirs(cfg_.checkpoint_dir);
    mon.record().save(calibration_path());
    write_config(calibration_path());
    for (const auto& m : mon.record().modes)
        out_ << "mode " << m.mode << ": n " << m.n << ", tau " << format_double(m.tau) << "\n";
    out_ << "wrote " << calibration_path().string() << "\n";
    log_ << "calibrated in " << seconds_since(t0) << " s\n";
    return mon.record();
}

MonitorResult Pipeline::monitor(const State& s0, bool inline_calibration) {
    check_horizon();
    scenario_.check_initial_state(s0);
    auto sur = load_surrogate();
    auto pred = load_predictor();
    make_dirs(cfg_.data_dir / "cache");
    SampleCache cache(cfg_.data_dir / "cache");
    std::unique_ptr<CalibratedMonitor> mon;
    if (inline_calibration) {
        mon = std::make_unique<CalibratedMonitor>(build_monitor(sur, pred, load_split(Split::calibration), phi_,
                                                                property_name(), cfg_.alpha, cfg_.k,
                                                                cfg_.seeds.calibration, Exec::parallel, &cache));
    } else {
        require(calibration_path(), "calibrate");
        mon = std::make_unique<CalibratedMonitor>(sur, pred, phi_, CalibrationRecord::load(calibration_path()));
    }
    auto r = mon->monitor(s0, cfg_.seeds.test, Exec::parallel, &cache);

    out_ << "s0 = [";
    for (std::size_t i = 0; i < s0.size(); ++i) out_ << (i ? ", " : "") << format_double(s0[i]);
    out_ << "]  property " << property_name() << ": " << phi_.to_string() << "\n";
    for (const auto& pi : r.intervals)
        out_ << "mode " << pi.mode << ": " << format_interval(pi) << "  (K_mode " << pi.k_mode << ")\n";
    out_ << "union: " << format_union(r.segments) << "\n";

    std::string bits;
    for (double v : s0) bits.append(reinterpret_cast<const char*>(&v), sizeof v);
    const auto path = cfg_.report_dir / ("monitor-" + key_of(calibration_key() + " " + bits + " " +
                                                             std::to_string(cfg_.seeds.test)) + ".jsonl");
    make_dirs(cfg_.report_dir);
    atomic_write(path, to_jsonl(r));
    write_config(path);
    log_ << "wrote " << path.string() << " (cache hits " << cache.hits() << ", misses " << cache.misses() << ")\n";
    return r;
}

EvalReport Pipeline::evaluate() {
    check_horizon();
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset cal = load_split(Split::calibration);
    const Dataset test = load_split(Split::test);
    auto sur = load_surrogate();
    auto pred = load_predictor();
    ExactPredictor exact(scenario_);

    EvalInputs in;
    in.surrogate = sur.get();
    in.predictor = pred.get();
    in.exact = &exact;
    in.cal = &cal;
    in.test = &test;
    in.phi = phi_;
    in.property = property_name();
    in.scenario = to_string(scenario_.id());
    EvalConfig ec;
    ec.alpha = cfg_.alpha;
    ec.k = cfg_.k;
    ec.rounds = cfg_.rounds;
    ec.cal_draw = cfg_.cal_draw;
    ec.replacement = cfg_.replacement;
    ec.seed = cfg_.seeds.calibration;
    ec.test_seed = cfg_.seeds.test;
    auto rep = bootstrap_evaluate(in, ec);

    make_dirs(cfg_.report_dir);
    emit_report(rep, report_path());
    write_config(report_path());
    out_ << summary_table(rep);
    out_ << "wrote " << report_path().string() << "\n";
    log_ << "evaluated in " << seconds_since(t0) << " s\n";
    return rep;
}

std::string format_interval(const PredictionInterval& pi) {
    if (pi.degenerate || (!std::isfinite(pi.lo) && !std::isfinite(pi.hi))) return "(-inf, inf) [degenerate]";
    std::string s = "[" + format_double(pi.lo) + ", " + format_double(pi.hi) + "]";
    if (pi.collapsed) s += " [collapsed]";
    return s;
}

std::string format_union(std::span<const Segment> segments) {
    if (segments.empty()) return "(empty)";
    std::string s;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (i) s += " U ";
        const auto& g = segments[i];
        s += (std::isfinite(g.lo) ? "[" + format_double(g.lo) : "(-inf") + ", " +
             (std::isfinite(g.hi) ? format_double(g.hi) + "]" : "inf)");
    }
    return s;
}

State parse_state(const std::string& text) {
    const auto v = parse_doubles(text, "s0");
    if (v.empty()) throw ConfigError("s0", "empty state");
    return State(v.begin(), v.end());
}

}  // namespace qpm
