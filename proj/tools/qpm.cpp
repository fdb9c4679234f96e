// qpm: dataset generation, training, calibration, monitoring and evaluation.
//
// Exit codes: 0 ok, 1 other error, 2 bad config or input, 3 I/O,
// 4 training diverged, 5 property lookahead exceeds the horizon.

#include <CLI11.hpp>
#include <iostream>

#include "qpm/error.hpp"
#include "qpm/pipeline.hpp"

namespace {

struct Overrides {
    std::string config_file;
    qpm::KeyValues kv;
};

// Options shared by every subcommand; each maps onto a config key.
void add_config_options(CLI::App* app, Overrides& o) {
    app->add_option("-c,--config", o.config_file, "key = value config file");
    auto opt = [&](const std::string& flags, const std::string& key, const std::string& help) {
        app->add_option_function<std::string>(flags, [&o, key](const std::string& v) { o.kv.set(key, v); }, help);
    };
    opt("--preset", "preset", "desk or paper");
    opt("--scenario", "scenario", "signal, navigation, crossroad, multi_agent_crossroad");
    opt("--scenario-file", "scenario_file", "scenario spec file");
    opt("--property", "property", "property id or inline formula text");
    opt("--alpha", "alpha", "miscoverage level in (0, 1)");
    opt("-K,--samples", "K", "surrogate samples per state");
    opt("--threads", "threads", "cap on worker threads");
    opt("--seed-dataset", "seeds.dataset", "dataset seed");
    opt("--seed-training", "seeds.training", "training seed");
    opt("--seed-calibration", "seeds.calibration", "calibration seed");
    opt("--seed-test", "seeds.test", "test seed");
    opt("--train-size", "sizes.train", "training trajectories");
    opt("--cal-states", "sizes.cal_states", "calibration initial states");
    opt("--cal-per-state", "sizes.cal_per_state", "trajectories per calibration state");
    opt("--test-states", "sizes.test_states", "test initial states");
    opt("--test-per-state", "sizes.test_per_state", "trajectories per test state");
    opt("--surrogate", "surrogate.kind", "resample or diffusion");
    opt("--k-nn", "surrogate.k_nn", "neighbours for the resampling surrogate");
    opt("--epochs", "surrogate.epochs", "diffusion training epochs");
    opt("--batch", "surrogate.batch", "diffusion batch size");
    opt("--lr", "surrogate.lr", "diffusion learning rate");
    opt("--predictor", "predictor.kind", "exact or learned");
    opt("--rounds", "eval.rounds", "bootstrap rounds");
    opt("--cal-draw", "eval.cal_draw", "calibration states drawn per test point (0 = all)");
    opt("--data-dir", "paths.data_dir", "dataset directory");
    opt("--checkpoint-dir", "paths.checkpoint_dir", "checkpoint directory");
    opt("--report-dir", "paths.report_dir", "report directory");
    app->add_option_function<std::vector<std::string>>(
        "--set",
        [&o](const std::vector<std::string>& items) {
            for (const auto& item : items) {
                const auto eq = item.find('=');
                if (eq == std::string::npos) throw qpm::ConfigError(item, "--set expects key=value");
                o.kv.set(item.substr(0, eq), item.substr(eq + 1));
            }
        },
        "any config key, e.g. --set surrogate.ema_decay=0.99");
}

qpm::RunConfig resolve(Overrides& o) {
    qpm::KeyValues kv = o.config_file.empty() ? qpm::KeyValues{} : qpm::KeyValues::load(o.config_file);
    for (const auto& [k, v] : o.kv.entries()) kv.set(k, v);
    // --property takes either an id or formula text; ids are plain words.
    if (auto p = o.kv.get("property")) {
        const bool word = !p->empty() && p->find_first_not_of(
                                             "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_") ==
                                             std::string::npos;
        if (!word || *p == "true" || *p == "false") {
            kv.set("formula", *p);
            kv.set("property", "");
        } else {
            kv.set("formula", "");
        }
    }
    auto cfg = qpm::RunConfig::from_kv(kv);
    cfg.validate();
    qpm::set_thread_limit(cfg.threads);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantitative predictive monitoring with mode-conditional conformal intervals"};
    app.require_subcommand(1);

    Overrides gen, trn, cal, mon, ev;
    auto* g = app.add_subcommand("generate", "simulate train/calibration/test datasets");
    add_config_options(g, gen);
    auto* t = app.add_subcommand("train", "train the surrogate and, if learned, the mode classifier");
    add_config_options(t, trn);
    auto* c = app.add_subcommand("calibrate", "compute per-mode conformal thresholds");
    add_config_options(c, cal);
    auto* m = app.add_subcommand("monitor", "print calibrated per-mode intervals at one initial state");
    add_config_options(m, mon);
    std::string s0_text;
    bool inline_cal = false;
    m->add_option("--s0", s0_text, "initial state, comma separated")->required();
    m->add_flag("--calibrate", inline_cal, "calibrate inline instead of loading the stored record");
    auto* e = app.add_subcommand("evaluate", "bootstrap evaluation on the test split");
    add_config_options(e, ev);
    auto* r = app.add_subcommand("report", "print the summary table of stored reports");
    std::vector<std::string> report_files;
    r->add_option("reports", report_files, "report JSON files")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return 2;
    } catch (const qpm::ConfigError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    }

    try {
        if (g->parsed()) {
            qpm::Pipeline(resolve(gen), std::cout, std::cerr).generate();
        } else if (t->parsed()) {
            qpm::Pipeline(resolve(trn), std::cout, std::cerr).train();
        } else if (c->parsed()) {
            qpm::Pipeline(resolve(cal), std::cout, std::cerr).calibrate();
        } else if (m->parsed()) {
            qpm::Pipeline p(resolve(mon), std::cout, std::cerr);
            p.monitor(qpm::parse_state(s0_text), inline_cal);
        } else if (e->parsed()) {
            qpm::Pipeline(resolve(ev), std::cout, std::cerr).evaluate();
        } else if (r->parsed()) {
            for (const auto& f : report_files) std::cout << qpm::summary_table(qpm::read_report(f));
        }
    } catch (const qpm::ConfigError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const qpm::ParseError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const qpm::DimensionError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const qpm::DomainError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 2;
    } catch (const qpm::IoError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
    } catch (const qpm::TrainingError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 4;
    } catch (const qpm::HorizonError& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 5;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
