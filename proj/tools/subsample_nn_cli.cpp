#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "subsample_nn/analysis.hpp"
#include "subsample_nn/config.hpp"
#include "subsample_nn/experiment.hpp"
#include "subsample_nn/mc_matmul.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitTheoryFail = 3;

struct RunFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--set", f.overrides, "Override a config entry, key.path=value (repeatable)");
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--seed", f.seed, "Run seed");
    cmd->add_option("--epochs", f.epochs, "Training epochs");
}

/// Config document with overrides applied, plus the directory relative
/// paths resolve against.
std::pair<json, fs::path> load_document(const RunFlags& f) {
    json doc = json::object();
    fs::path base = fs::current_path();
    if (!f.config_path.empty()) {
        doc = snn::load_config_json(f.config_path);
        base = fs::absolute(f.config_path).parent_path();
    }
    for (const auto& o : f.overrides) {
        snn::apply_override(doc, o);
    }
    if (f.seed) {
        doc["seed"] = *f.seed;
    }
    if (f.epochs) {
        doc["epochs"] = *f.epochs;
    }
    return {doc, base};
}

snn::RunConfig resolve(const json& doc, const fs::path& base, const std::optional<std::string>& out) {
    snn::RunConfig c = snn::config_from_json(doc, base);
    if (out) {
        c.out = fs::absolute(*out).lexically_normal().string();
    }
    snn::validate(c);
    return c;
}

int cmd_train(const RunFlags& f) {
    const auto [doc, base] = load_document(f);
    const snn::RunConfig c = resolve(doc, base, f.out);
    const auto res = snn::run_training(c);
    std::cout << "policy " << res.report.policy << ", test accuracy " << res.report.test_accuracy << "\n"
              << "report written to " << c.out << "\n";
    return kExitOk;
}

std::string config_key_for(const std::string& vary) {
    if (vary == "layers") {
        return "model.hidden_layers";
    }
    if (vary == "policy") {
        return "policy.kind";
    }
    return vary;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

std::size_t sweep_parallelism() {
    const char* env = std::getenv("SUBSAMPLE_NN_THREADS");
    if (env == nullptr || *env == '\0') {
        return 1;
    }
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (*end != '\0' || v == 0) {
        throw snn::ConfigError("SUBSAMPLE_NN_THREADS must be a positive integer");
    }
    return v;
}

double total_seconds_from_timing(const fs::path& csv) {
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    double total = 0.0;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string epoch, phase, seconds;
        std::getline(ss, epoch, ',');
        std::getline(ss, phase, ',');
        std::getline(ss, seconds, ',');
        if (phase == "total") {
            total += std::stod(seconds);
        }
    }
    return total;
}

/// Each variant trains in its own process; the FLOP counter is process-global.
int cmd_sweep(const RunFlags& f, const std::string& vary, const std::string& values_arg) {
    const auto [doc, base] = load_document(f);
    const snn::RunConfig base_cfg = resolve(doc, base, f.out);
    std::vector<std::string> values = split_list(values_arg);
    if (values.empty()) {
        if (vary != "layers") {
            throw CLI::ValidationError("--values", "required unless --vary layers");
        }
        values = {"1", "2", "3", "4", "5", "6", "7"};
    }
    const std::string key = config_key_for(vary);

    std::vector<snn::RunConfig> variants;
    std::vector<std::string> names;
    for (const auto& v : values) {
        json d = doc;
        snn::apply_override(d, key + "=" + v);
        snn::RunConfig c = resolve(d, base, std::nullopt);
        const std::string name = vary + "=" + v;
        c.out = (fs::path(base_cfg.out) / name).string();
        variants.push_back(c);
        names.push_back(name);
    }

    const std::size_t slots = sweep_parallelism();
    std::size_t running = 0;
    bool failed = false;
    auto reap = [&] {
        int status = 0;
        if (wait(&status) > 0) {
            --running;
            failed |= !(WIFEXITED(status) && WEXITSTATUS(status) == 0);
        }
    };
    std::cout.flush();
    for (const auto& c : variants) {
        while (running >= slots) {
            reap();
        }
        const pid_t pid = fork();
        if (pid < 0) {
            throw snn::Error("sweep: fork failed");
        }
        if (pid == 0) {
            int code = 0;
            try {
                snn::run_training(c);
            } catch (const std::exception& e) {
                std::cerr << "sweep variant " << c.out << ": " << e.what() << "\n";
                code = 1;
            }
            std::cerr.flush();
            _exit(code);
        }
        ++running;
    }
    while (running > 0) {
        reap();
    }
    if (failed) {
        std::cerr << "sweep: at least one variant failed\n";
        return kExitRuntime;
    }

    std::ostringstream merged;
    merged << "variant,accuracy,total_seconds,total_flops\n";
    merged.precision(9);
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const fs::path dir(variants[i].out);
        const json summary = snn::load_config_json((dir / "summary.json").string());
        merged << names[i] << ',' << summary.at("accuracy").get<double>() << ','
               << total_seconds_from_timing(dir / "timing.csv") << ','
               << summary.at("flops").at("total").get<std::uint64_t>() << '\n';
    }
    fs::create_directories(base_cfg.out);
    snn::write_text(fs::path(base_cfg.out) / "sweep.csv", merged.str());
    std::cout << merged.str();
    return kExitOk;
}

void report(bool ok, const std::string& what, bool& all_ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << what << "\n";
    all_ok &= ok;
}

int cmd_verify_theory(const std::vector<std::size_t>& cs, std::size_t depth, std::optional<std::size_t> width,
                      const std::optional<std::string>& out) {
    bool all_ok = true;
    for (std::size_t c : cs) {
        const std::size_t w = width.value_or(c + 1);
        if (c < 1 || depth < 1 || w % (c + 1) != 0) {
            std::cerr << "verify-theory: width " << w << " must be a positive multiple of c+1=" << c + 1
                      << " (c >= 1, depth >= 1)\n";
            return kExitUsage;
        }
        const auto fx = snn::build_theorem1_network(c, depth, w);
        const auto table = snn::theorem1_check(fx);

        std::cout << "c=" << c << " depth=" << depth << " width=" << w << "\n";
        std::cout << "  k  ratio       expected\n";
        bool increasing = true;
        bool split_ok = true;
        for (std::size_t i = 0; i < table.rows.size(); ++i) {
            const auto& r = table.rows[i];
            std::printf("  %zu  %.6f    %.6f\n", r.k, r.ratio, r.expected);
            increasing &= i == 0 || r.ratio > table.rows[i - 1].ratio;
            const double cc = static_cast<double>(c);
            split_ok &= std::abs(r.min_split_ratio - cc) <= 1e-12 * cc && std::abs(r.max_split_ratio - cc) <= 1e-12 * cc;
        }
        const std::string tag = " (c=" + std::to_string(c) + ")";
        report(split_ok, "active/omitted contribution ratio equals c at every node" + tag, all_ok);
        report(table.holds(1e-9), "ratio e/abar equals ((c+1)/c)^k - 1 within 1e-9" + tag, all_ok);
        report(increasing, "ratio strictly increasing in k" + tag, all_ok);
        if (out) {
            fs::create_directories(*out);
            std::ostringstream csv;
            snn::write_theorem_csv(table, csv);
            snn::write_text(fs::path(*out) / ("theorem_c" + std::to_string(c) + ".csv"), csv.str());
        }
    }

    // Recursion identity on random linear fixtures.
    snn::Rng rng(0x1e33a, 1);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t layers = 1 + rng.uniform_index(4);
        std::vector<std::size_t> dims;
        for (std::size_t l = 0; l <= layers; ++l) {
            dims.push_back(1 + rng.uniform_index(16));
        }
        snn::MlpModel model = snn::init_weights(dims, snn::InitScheme::HeUniform, rng.next_u64(), snn::Activation::Linear);
        for (auto& b : model.biases) {
            for (double& v : b.span()) {
                v = rng.gauss();
            }
        }
        snn::InputMasks masks;
        for (const auto& w : model.weights) {
            snn::Matrix m(w.rows(), w.cols());
            for (double& v : m.span()) {
                v = rng.bernoulli(0.7) ? 1.0 : 0.0;
            }
            masks.push_back(std::move(m));
        }
        snn::Vector x(dims.front());
        for (double& v : x.span()) {
            v = rng.gauss();
        }
        const auto prof = snn::lemma1_error(model, x, masks);
        for (std::size_t l = 0; l < prof.error.size(); ++l) {
            for (std::size_t j = 0; j < prof.error[l].size(); ++j) {
                const double e = prof.error[l][j];
                const double r = prof.recursion[l][j];
                const double scale = std::max({std::abs(e), std::abs(r), 1e-300});
                worst = std::max(worst, e == r ? 0.0 : std::abs(e - r) / scale);
            }
        }
    }
    std::ostringstream msg;
    msg << "error recursion on 100 random linear networks, worst relative gap " << worst;
    report(worst <= 1e-10, msg.str(), all_ok);
    return all_ok ? kExitOk : kExitTheoryFail;
}

int cmd_matmul_bench(std::size_t m, std::size_t n, std::size_t p, std::size_t k, std::size_t trials,
                     std::uint64_t seed) {
    if (m == 0 || n == 0 || p == 0 || trials == 0) {
        throw snn::ParameterError("matmul-bench: dimensions and trials must be positive");
    }
    if (k == 0 || k > n) {
        throw snn::ParameterError("matmul-bench: k must lie in [1, n]");
    }
    snn::Rng rng(seed, 0xbe4c);
    snn::Matrix a(m, n);
    snn::Matrix b(n, p);
    for (double& v : a.span()) {
        v = rng.gauss();
    }
    for (double& v : b.span()) {
        v = rng.gauss();
    }
    std::uint64_t f0 = snn::flops::read();
    const snn::Matrix exact = snn::matmul(a, b);
    const double exact_flops = static_cast<double>(snn::flops::read() - f0);

    f0 = snn::flops::read();
    const snn::Vector probs = snn::optimal_probs_bernoulli(a, b, k);
    const double prob_flops = static_cast<double>(snn::flops::read() - f0);
    const double analytic = snn::bernoulli_expected_error(a, b, probs);

    snn::Rng draw(seed, 0xd4a);
    double err_sum = 0.0;
    double product_flops = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        const auto plan = snn::draw_bernoulli_plan(probs, k, draw);
        f0 = snn::flops::read();
        const snn::Matrix approx = snn::sampled_product(a, b, plan);
        product_flops += static_cast<double>(snn::flops::read() - f0);
        const double e = snn::frobenius_norm(exact - approx);
        err_sum += e * e;
    }
    const double empirical = err_sum / static_cast<double>(trials);
    const double mean_product = product_flops / static_cast<double>(trials);
    const double rel = analytic > 0.0 ? std::abs(empirical - analytic) / analytic : std::abs(empirical);

    json out = {{"m", m},
                {"n", n},
                {"p", p},
                {"k", k},
                {"trials", trials},
                {"seed", seed},
                {"analytic_error", analytic},
                {"empirical_error", empirical},
                {"relative_gap", rel},
                {"flop_ratio", mean_product / exact_flops},
                {"flop_ratio_with_overhead", (mean_product + prob_flops) / exact_flops},
                {"k_over_n", static_cast<double>(k) / static_cast<double>(n)}};
    std::cout << out.dump(2) << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train MLPs with exact or sampled layer products and verify the error-propagation theory"};
    app.require_subcommand(1);

    RunFlags train_flags;
    auto* train = app.add_subcommand("train", "Train one configuration and write its report");
    add_run_flags(train, train_flags);

    RunFlags sweep_flags;
    std::string vary = "layers";
    std::string values;
    auto* sweep = app.add_subcommand("sweep", "Train one variant per value of a config key");
    add_run_flags(sweep, sweep_flags);
    sweep->add_option("--vary", vary, "layers, batch_size, policy, or any key.path")->capture_default_str();
    sweep->add_option("--values", values, "Comma-separated values (layers defaults to 1..7)");

    std::vector<std::size_t> cs{5};
    std::size_t depth = 6;
    std::optional<std::size_t> width;
    std::optional<std::string> theory_out;
    auto* theory = app.add_subcommand("verify-theory", "Check the error-propagation law on constructed networks");
    theory->add_option("--c", cs, "Active-to-omitted ratios")->delimiter(',')->capture_default_str();
    theory->add_option("--depth", depth, "Number of layers")->capture_default_str();
    theory->add_option("--width", width, "Layer width, a multiple of c+1 (default c+1)");
    theory->add_option("--out", theory_out, "Directory for k,ratio CSV tables");

    std::size_t bm = 64, bn = 64, bp = 64, bk = 8, trials = 1000;
    std::uint64_t bseed = 0;
    auto* bench = app.add_subcommand("matmul-bench", "Sampled vs exact product: error and FLOP ratio");
    bench->add_option("--m", bm)->capture_default_str();
    bench->add_option("--n", bn)->capture_default_str();
    bench->add_option("--p", bp)->capture_default_str();
    bench->add_option("--k", bk, "Expected number of sampled indices")->capture_default_str();
    bench->add_option("--trials", trials)->capture_default_str();
    bench->add_option("--seed", bseed)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*train) {
            return cmd_train(train_flags);
        }
        if (*sweep) {
            return cmd_sweep(sweep_flags, vary, values);
        }
        if (*theory) {
            return cmd_verify_theory(cs, depth, width, theory_out);
        }
        if (*bench) {
            return cmd_matmul_bench(bm, bn, bp, bk, trials, bseed);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const snn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const snn::ParameterError& e) {
        std::cerr << "parameter error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
