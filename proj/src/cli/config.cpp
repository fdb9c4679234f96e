#include "qpm/config.hpp"

#include <cstdlib>
#include <set>
#include <sstream>

#include "qpm/error.hpp"

namespace qpm {

namespace {

std::size_t as_size(const KeyValues& kv, const std::string& key, std::size_t fallback) {
    const long long v = kv.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(key, "must be non-negative");
    return static_cast<std::size_t>(v);
}

std::uint64_t as_seed(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
    auto v = kv.get(key);
    if (!v) return fallback;
    char* end = nullptr;
    const unsigned long long s = std::strtoull(v->c_str(), &end, 10);
    if (v->empty() || *end != '\0' || v->front() == '-') throw ConfigError(key, "expected an unsigned integer");
    return s;
}

bool as_bool(const KeyValues& kv, const std::string& key, bool fallback) {
    auto v = kv.get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1") return true;
    if (*v == "false" || *v == "0") return false;
    throw ConfigError(key, "expected true or false");
}

std::vector<std::size_t> as_widths(const KeyValues& kv, const std::string& key, std::vector<std::size_t> fallback) {
    if (!kv.contains(key)) return fallback;
    std::vector<std::size_t> out;
    for (double d : kv.get_doubles(key, {})) {
        if (d < 1 || d != static_cast<double>(static_cast<std::size_t>(d)))
            throw ConfigError(key, "widths must be positive integers");
        out.push_back(static_cast<std::size_t>(d));
    }
    return out;
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "preset", "scenario", "scenario_file", "property", "formula", "alpha", "K", "threads",
        "seeds.dataset", "seeds.training", "seeds.calibration", "seeds.test",
        "sizes.train", "sizes.cal_states", "sizes.cal_per_state", "sizes.test_states", "sizes.test_per_state",
        "surrogate.kind", "surrogate.k_nn", "surrogate.hidden", "surrogate.prediction", "surrogate.embed_dim",
        "surrogate.cond_frequencies", "surrogate.steps", "surrogate.beta_first", "surrogate.beta_last",
        "surrogate.epochs", "surrogate.batch", "surrogate.lr", "surrogate.ema_decay",
        "predictor.kind", "predictor.epochs", "predictor.lr", "predictor.hidden", "predictor.holdout",
        "eval.rounds", "eval.cal_draw", "eval.replacement",
        "paths.data_dir", "paths.checkpoint_dir", "paths.report_dir"};
    return keys;
}

}  // namespace

std::string to_string(SurrogateKind k) { return k == SurrogateKind::resample ? "resample" : "diffusion"; }
std::string to_string(PredictorKind k) { return k == PredictorKind::exact ? "exact" : "learned"; }

std::filesystem::path data_root() {
    const char* env = std::getenv("QPM_DATA_ROOT");
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("qpm-data");
}

RunConfig RunConfig::from_preset(const std::string& name) {
    RunConfig c;
    if (name == "desk") return c;
    if (name != "paper") throw ConfigError("preset", "expected desk or paper, got '" + name + "'");
    c.preset = "paper";
    c.sizes = {3000, 600, 300, 200, 300};
    c.k = 300;
    c.surrogate = SurrogateKind::diffusion;
    c.train.epochs = 200;
    c.train.batch = 512;
    c.train.lr = 5e-4;
    c.cal_draw = 500;
    return c;
}

RunConfig RunConfig::from_kv(const KeyValues& kv) {
    RunConfig c = from_preset(kv.get_string("preset", "desk"));
    c.apply(kv);
    return c;
}

void RunConfig::apply(const KeyValues& kv) {
    for (const auto& [key, value] : kv.entries())
        if (!known_keys().contains(key)) throw ConfigError(key, "unknown key");

    if (auto v = kv.get("scenario")) scenario = parse_scenario_id(*v);
    scenario_file = kv.get_string("scenario_file", scenario_file);
    property = kv.get_string("property", property);
    formula = kv.get_string("formula", formula);
    alpha = kv.get_double("alpha", alpha);
    k = as_size(kv, "K", k);
    threads = static_cast<int>(kv.get_int("threads", threads));

    seeds.dataset = as_seed(kv, "seeds.dataset", seeds.dataset);
    seeds.training = as_seed(kv, "seeds.training", seeds.training);
    seeds.calibration = as_seed(kv, "seeds.calibration", seeds.calibration);
    seeds.test = as_seed(kv, "seeds.test", seeds.test);

    sizes.train = as_size(kv, "sizes.train", sizes.train);
    sizes.cal_states = as_size(kv, "sizes.cal_states", sizes.cal_states);
    sizes.cal_per_state = as_size(kv, "sizes.cal_per_state", sizes.cal_per_state);
    sizes.test_states = as_size(kv, "sizes.test_states", sizes.test_states);
    sizes.test_per_state = as_size(kv, "sizes.test_per_state", sizes.test_per_state);

    if (auto v = kv.get("surrogate.kind")) {
        if (*v == "resample") surrogate = SurrogateKind::resample;
        else if (*v == "diffusion") surrogate = SurrogateKind::diffusion;
        else throw ConfigError("surrogate.kind", "expected resample or diffusion");
    }
    k_nn = as_size(kv, "surrogate.k_nn", k_nn);
    arch.hidden = as_widths(kv, "surrogate.hidden", arch.hidden);
    if (auto v = kv.get("surrogate.prediction")) {
        if (*v == "x0") arch.prediction = Prediction::x0;
        else if (*v == "epsilon") arch.prediction = Prediction::epsilon;
        else throw ConfigError("surrogate.prediction", "expected x0 or epsilon");
    }
    arch.embed_dim = as_size(kv, "surrogate.embed_dim", arch.embed_dim);
    arch.cond_frequencies = as_size(kv, "surrogate.cond_frequencies", arch.cond_frequencies);
    arch.steps = as_size(kv, "surrogate.steps", arch.steps);
    arch.beta_first = kv.get_double("surrogate.beta_first", arch.beta_first);
    arch.beta_last = kv.get_double("surrogate.beta_last", arch.beta_last);
    train.epochs = as_size(kv, "surrogate.epochs", train.epochs);
    train.batch = as_size(kv, "surrogate.batch", train.batch);
    train.lr = kv.get_double("surrogate.lr", train.lr);
    train.ema_decay = kv.get_double("surrogate.ema_decay", train.ema_decay);

    if (auto v = kv.get("predictor.kind")) {
        if (*v == "exact") predictor = PredictorKind::exact;
        else if (*v == "learned") predictor = PredictorKind::learned;
        else throw ConfigError("predictor.kind", "expected exact or learned");
    }
    classifier.epochs = as_size(kv, "predictor.epochs", classifier.epochs);
    classifier.lr = kv.get_double("predictor.lr", classifier.lr);
    classifier.hidden = as_widths(kv, "predictor.hidden", classifier.hidden);
    classifier.holdout = kv.get_double("predictor.holdout", classifier.holdout);

    rounds = as_size(kv, "eval.rounds", rounds);
    cal_draw = as_size(kv, "eval.cal_draw", cal_draw);
    replacement = as_bool(kv, "eval.replacement", replacement);

    if (auto v = kv.get("paths.data_dir")) data_dir = *v;
    if (auto v = kv.get("paths.checkpoint_dir")) checkpoint_dir = *v;
    if (auto v = kv.get("paths.report_dir")) report_dir = *v;
}

void RunConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha", "must lie in (0, 1), got " + format_double(alpha));
    if (k == 0) throw ConfigError("K", "must be at least 1");
    if (threads < 0) throw ConfigError("threads", "must be non-negative");
    if (sizes.train == 0) throw ConfigError("sizes.train", "must be at least 1");
    if (sizes.cal_states == 0) throw ConfigError("sizes.cal_states", "must be at least 1");
    if (sizes.cal_per_state == 0) throw ConfigError("sizes.cal_per_state", "must be at least 1");
    if (sizes.test_states == 0) throw ConfigError("sizes.test_states", "must be at least 1");
    if (sizes.test_per_state == 0) throw ConfigError("sizes.test_per_state", "must be at least 1");
    if (k_nn == 0 || k_nn > sizes.train) throw ConfigError("surrogate.k_nn", "must be in [1, sizes.train]");
    if (arch.steps == 0) throw ConfigError("surrogate.steps", "must be at least 1");
    if (!(arch.beta_first > 0 && arch.beta_first <= arch.beta_last && arch.beta_last < 1))
        throw ConfigError("surrogate.beta_first", "need 0 < beta_first <= beta_last < 1");
    if (train.batch == 0) throw ConfigError("surrogate.batch", "must be at least 1");
    if (!(train.lr > 0)) throw ConfigError("surrogate.lr", "must be positive");
    if (!(train.ema_decay >= 0 && train.ema_decay < 1)) throw ConfigError("surrogate.ema_decay", "must lie in [0, 1)");
    if (!(classifier.lr > 0)) throw ConfigError("predictor.lr", "must be positive");
    if (!(classifier.holdout >= 0 && classifier.holdout < 1))
        throw ConfigError("predictor.holdout", "must lie in [0, 1)");
    if (rounds == 0) throw ConfigError("eval.rounds", "must be at least 1");
    if (!replacement && cal_draw > sizes.cal_states)
        throw ConfigError("eval.cal_draw", "exceeds sizes.cal_states without replacement");
}

void RunConfig::resolve_paths() {
    const auto root = data_root();
    if (data_dir.empty()) data_dir = root / "data";
    if (checkpoint_dir.empty()) checkpoint_dir = root / "checkpoints";
    if (report_dir.empty()) report_dir = root / "reports";
}

std::string RunConfig::to_kv() const {
    std::ostringstream o;
    o << "preset = " << quoted(preset) << "\n"
      << "scenario = " << quoted(to_string(scenario)) << "\n"
      << "scenario_file = " << quoted(scenario_file) << "\n"
      << "property = " << quoted(property) << "\n"
      << "formula = " << quoted(formula) << "\n"
      << "alpha = " << format_double(alpha) << "\n"
      << "K = " << k << "\n"
      << "threads = " << threads << "\n"
      << "\n[seeds]\n"
      << "dataset = " << seeds.dataset << "\n"
      << "training = " << seeds.training << "\n"
      << "calibration = " << seeds.calibration << "\n"
      << "test = " << seeds.test << "\n"
      << "\n[sizes]\n"
      << "train = " << sizes.train << "\n"
      << "cal_states = " << sizes.cal_states << "\n"
      << "cal_per_state = " << sizes.cal_per_state << "\n"
      << "test_states = " << sizes.test_states << "\n"
      << "test_per_state = " << sizes.test_per_state << "\n"
      << "\n[surrogate]\n"
      << "kind = " << quoted(to_string(surrogate)) << "\n"
      << "k_nn = " << k_nn << "\n"
      << "hidden = " << join(arch.hidden) << "\n"
      << "prediction = " << quoted(arch.prediction == Prediction::x0 ? "x0" : "epsilon") << "\n"
      << "embed_dim = " << arch.embed_dim << "\n"
      << "cond_frequencies = " << arch.cond_frequencies << "\n"
      << "steps = " << arch.steps << "\n"
      << "beta_first = " << format_double(arch.beta_first) << "\n"
      << "beta_last = " << format_double(arch.beta_last) << "\n"
      << "epochs = " << train.epochs << "\n"
      << "batch = " << train.batch << "\n"
      << "lr = " << format_double(train.lr) << "\n"
      << "ema_decay = " << format_double(train.ema_decay) << "\n"
      << "\n[predictor]\n"
      << "kind = " << quoted(to_string(predictor)) << "\n"
      << "epochs = " << classifier.epochs << "\n"
      << "lr = " << format_double(classifier.lr) << "\n"
      << "hidden = " << join(classifier.hidden) << "\n"
      << "holdout = " << format_double(classifier.holdout) << "\n"
      << "\n[eval]\n"
      << "rounds = " << rounds << "\n"
      << "cal_draw = " << cal_draw << "\n"
      << "replacement = " << (replacement ? "true" : "false") << "\n"
      << "\n[paths]\n"
      << "data_dir = " << quoted(data_dir.string()) << "\n"
      << "checkpoint_dir = " << quoted(checkpoint_dir.string()) << "\n"
      << "report_dir = " << quoted(report_dir.string()) << "\n";
    return o.str();
}

}  // namespace qpm
