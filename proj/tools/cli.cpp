#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "mema/bias_algebra.hpp"
#include "mema/corruption.hpp"
#include "mema/csv.hpp"
#include "mema/diagnostics.hpp"
#include "mema/error.hpp"
#include "mema/identification.hpp"
#include "mema/io.hpp"
#include "mema/models.hpp"
#include "mema/study_data.hpp"

namespace mema::cli {

namespace fs = std::filesystem;

namespace {

constexpr double kRhatLimit = 1.05;

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::optional<std::uint64_t> parse_seed(const std::string& text, const std::string& what) {
    if (text.empty()) return std::nullopt;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        if (text.front() == '-') throw std::invalid_argument("negative");
        v = std::stoull(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size()) throw Error(ErrorCode::DomainError, what + " must be a non-negative integer, got '" + text + "'");
    return v;
}

/// Arguments with --out and --seed removed, so that a manifest can re-issue
/// them with an explicit seed and a new output directory.
std::vector<std::string> strip_run_options(const std::vector<std::string>& args) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a == "--out" || a == "--seed") {
            ++i;
            continue;
        }
        if (a.rfind("--out=", 0) == 0 || a.rfind("--seed=", 0) == 0) continue;
        out.push_back(a);
    }
    return out;
}

/// Collects inputs and outputs of one command; nothing is written until
/// commit, so a failing command leaves no partial outputs.
class Run {
public:
    Run(std::vector<std::string> args, std::ostream& out, std::ostream& err)
        : out(out), err(err), args_(std::move(args)), start_(std::chrono::steady_clock::now()) {}

    std::string seed_text;
    std::string out_dir = ".";
    std::ostream& out;
    std::ostream& err;
    Json config = Json::object();

    /// --seed, else MEMA_SEED, else the fallback.
    std::uint64_t seed(std::uint64_t fallback = 1) {
        if (!seed_) {
            if (auto s = parse_seed(seed_text, "--seed")) {
                seed_ = *s;
            } else if (const char* env = std::getenv("MEMA_SEED"); env && *env) {
                seed_ = *parse_seed(env, "MEMA_SEED");
            } else {
                seed_ = fallback;
            }
        }
        return *seed_;
    }

    void input(const std::string& path) { inputs_[path] = sha256_file(path); }

    void emit(const std::string& name, std::string contents) { outputs_.emplace_back(name, std::move(contents)); }

    void commit() {
        const fs::path dir(out_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw Error(ErrorCode::IoError, "cannot create '" + dir.string() + "': " + ec.message());
        RunManifest m;
        m.command = args_.empty() ? "" : args_.front();
        m.arguments = strip_run_options(args_);
        m.arguments.push_back("--seed");
        m.arguments.push_back(std::to_string(seed()));
        m.inputs = inputs_;
        m.config = config;
        m.seed = seed();
        for (const auto& [name, contents] : outputs_) {
            write_file(dir / name, contents);
            m.outputs[name] = sha256_hex(contents);
        }
        m.duration_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_file(dir / "manifest.json", to_json(m).dump(2) + "\n");
    }

private:
    std::vector<std::string> args_;
    std::optional<std::uint64_t> seed_;
    std::map<std::string, std::string> inputs_;
    std::vector<std::pair<std::string, std::string>> outputs_;
    std::chrono::steady_clock::time_point start_;
};

void add_run_options(CLI::App* sub, Run& run) {
    sub->add_option("--seed", run.seed_text, "RNG seed (default: $MEMA_SEED, else 1)");
    sub->add_option("--out", run.out_dir, "Output directory (created if needed)")->capture_default_str();
}

std::vector<StudySummary> load_studies(Run& run, const std::string& path) {
    run.input(path);
    return load_summaries(path);
}

// fit

struct FitOptions {
    std::string data, model, config;
    int chains = 0, threads = -1;
    long iterations = 0, thin = 0, burn_in = -1;
    bool draws = false, strict = false;
};

int cmd_fit(Run& run, const FitOptions& o) {
    const ModelSpec spec = model_spec_from_json(parse_json_argument(o.model));
    McmcConfig cfg;
    if (!o.config.empty()) cfg = mcmc_config_from_json(parse_json_argument(o.config));
    if (o.chains > 0) cfg.chains = o.chains;
    if (o.threads >= 0) cfg.threads = o.threads;
    if (o.iterations > 0) cfg.iterations = o.iterations;
    if (o.thin > 0) cfg.thin = o.thin;
    if (o.burn_in >= 0) cfg.burn_in = o.burn_in;
    cfg.seed = run.seed(cfg.seed);
    validate(cfg);

    std::unique_ptr<Target> model;
    if (spec.kind == ModelKind::MultiIPD || spec.kind == ModelKind::MultiMA) {
        run.input(o.data);
        const IpdDataset data = load_ipd(o.data);
        model = spec.kind == ModelKind::MultiIPD ? build_multi_ipd_bmema(data, spec)
                                                 : build_multi_bayesma(refit_regressions(data), spec.priors);
    } else {
        model = build_model(spec, load_studies(run, o.data));
    }
    run.config = Json{{"model", to_json(spec)}, {"mcmc", to_json(cfg)}};

    const PosteriorSummary s = run_chains(*model, cfg);
    Json fit = to_json(s);
    fit["model"] = to_json(spec);
    fit["mcmc"] = to_json(cfg);
    run.emit("fit.json", fit.dump(2) + "\n");
    if (o.draws) run.emit("draws.csv", format_draws_csv(s.draws));

    std::string line;
    double worst = 1.0;
    for (const auto& p : s.parameters) {
        if (std::isfinite(p.rhat)) worst = std::max(worst, p.rhat);
        if (p.name.rfind("theta", 0) != 0) continue;
        if (!line.empty()) line += "; ";
        line += p.name + " " + fixed(p.median) + " [" + fixed(p.q025) + ", " + fixed(p.q975) + "]";
    }
    run.commit();
    run.out << line << "\n";
    for (const auto& w : s.warnings) run.err << "warning: " << w << "\n";
    if (worst > kRhatLimit) {
        run.err << "warning: max split R-hat " << fixed(worst) << " exceeds " << kRhatLimit << "\n";
        if (o.strict) return kExitNotConverged;
    }
    return kExitOk;
}

// identify

struct IdentifyOptions {
    std::string data;
    std::vector<double> tau_bar;
    double grid_step = 0.01;
    bool svg = false;
};

int cmd_identify(Run& run, const IdentifyOptions& o) {
    run.input(o.data);
    const csv::Table t = csv::read(o.data);
    const std::size_t cb = t.require_column("beta_star"), cg = t.require_column("gamma_lower");
    t.require_column("study_id");
    IdentificationProblem p;
    p.grid_step = o.grid_step;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        p.beta_star.push_back(csv::to_double(t, r, cb));
        p.gamma_lower.push_back(csv::to_double(t, r, cg));
    }
    run.seed();
    run.config = Json{{"tau_bar", o.tau_bar}, {"grid_step", o.grid_step}};

    Json regions = Json::array();
    std::vector<std::pair<double, Interval>> drawn;
    for (double tau : o.tau_bar) {
        p.tau_bar = tau;
        const Interval i = identification_interval(p);
        regions.push_back(Json{{"tau_bar", tau}, {"lo", i.lo}, {"hi", i.hi}});
        drawn.emplace_back(tau, i);
    }
    const Json result = regions.size() == 1 ? regions.front() : Json{{"regions", regions}};
    run.emit("identification.json", result.dump(2) + "\n");
    if (o.svg) {
        p.tau_bar = o.tau_bar.front();
        run.emit("identification.svg", identification_svg(p, drawn));
    }
    run.commit();
    run.out << result.dump() << "\n";
    return kExitOk;
}

// corrupt

struct CorruptOptions {
    std::string data, plan;
    bool summaries = false;
};

int cmd_corrupt(Run& run, const CorruptOptions& o) {
    run.input(o.data);
    run.input(o.plan);
    const IpdDataset data = load_ipd(o.data);
    const CorruptionPlan plan = load_plan(o.plan, run.seed());
    const IpdDataset corrupted = corrupt_ipd(data, plan);
    run.config = Json{{"summaries", o.summaries}};
    run.emit("corrupted.csv", format_ipd(corrupted));
    if (o.summaries) {
        std::set<std::string> clean;
        for (const auto& s : data.studies) {
            const auto it = plan.phi.find(s.study_id);
            if (it == plan.phi.end() || it->second.isZero()) clean.insert(s.study_id);
        }
        run.emit("summaries.csv", format_summaries(refit_summaries(corrupted, clean)));
    }
    run.commit();
    run.out << "corrupted " << corrupted.studies.size() << " studies, digest "
            << sha256_hex(format_ipd(corrupted)).substr(0, 16) << "\n";
    return kExitOk;
}

// bias

struct BiasOptions {
    std::string quantity, data, form = "alternative";
    double theta = NAN, tau = NAN;
};

int cmd_bias(Run& run, const BiasOptions& o) {
    const auto studies = load_studies(run, o.data);
    std::vector<double> gammas;
    for (const auto& s : studies) {
        if (!s.gamma) throw Error(ErrorCode::MissingField, "study " + s.study_id + " has no gamma value");
        gammas.push_back(*s.gamma);
    }
    run.seed();
    run.config = Json{{"quantity", o.quantity}, {"form", o.form}};
    Json result{{"quantity", o.quantity}, {"mean_gamma", sample_mean(gammas)}};
    if (gammas.size() > 1) result["var_gamma"] = sample_variance(gammas);
    std::string line = "E(gamma) " + fixed(sample_mean(gammas));
    if (gammas.size() > 1) line += ", Var(gamma) " + fixed(sample_variance(gammas));

    const auto need = [](double v, const char* flag) {
        if (!std::isfinite(v)) throw Error(ErrorCode::MissingField, std::string(flag) + " is required");
        return v;
    };
    if (o.quantity == "theta-star" || o.quantity == "tau-star") {
        const double theta = need(o.theta, "--theta");
        run.config["theta"] = theta;
        const double ts = naive_theta(gammas, theta);
        result["theta_star"] = ts;
        line = "theta* " + fixed(ts);
        if (o.quantity == "tau-star") {
            const double tau = need(o.tau, "--tau");
            run.config["tau"] = tau;
            const double t2 = o.form == "first" ? naive_tau2_first_form(gammas, theta, tau) : naive_tau2(gammas, theta, tau);
            result["tau2_star"] = t2;
            result["tau_star"] = std::sqrt(t2);
            line = "tau* " + fixed(std::sqrt(t2)) + " (tau*^2 " + fixed(t2) + ")";
        }
    }
    run.emit("bias.json", result.dump(2) + "\n");
    run.commit();
    run.out << line << "\n";
    return kExitOk;
}

// diagnose

struct DiagnoseOptions {
    std::string what, data, draws, parameter, prior;
    int permutations = 10000;
    bool strict = false;
};

int cmd_diagnose(Run& run, const DiagnoseOptions& o) {
    const auto need = [](const std::string& v, const char* flag) {
        if (v.empty()) throw Error(ErrorCode::MissingField, std::string(flag) + " is required");
        return v;
    };
    run.config = Json{{"what", o.what}};
    if (o.what == "het") {
        const auto studies = load_studies(run, need(o.data, "--data"));
        const CorrelationTest t = het_error_test(studies, o.permutations, run.seed());
        run.config["permutations"] = o.permutations;
        const Json result{{"correlation", t.correlation}, {"p_value", t.p_value}, {"permutations", t.permutations}};
        run.emit("het.json", result.dump(2) + "\n");
        run.commit();
        run.out << "cor(beta_hat, lambda_hat^2) " << fixed(t.correlation) << ", permutation p " << fixed(t.p_value, 4)
                << "\n";
        return kExitOk;
    }

    const std::string draws_path = need(o.draws, "--draws");
    run.input(draws_path);
    Draws draws = parse_draws_csv(read_file(draws_path), draws_path);
    run.seed();
    if (o.what == "ppo") {
        const PriorSpec prior = prior_from_json(parse_json_argument(need(o.prior, "--prior")));
        const std::string name = need(o.parameter, "--parameter");
        run.config["parameter"] = name;
        run.config["prior"] = to_json(prior);
        const PpoReport r = ppo(name, prior, draws.pooled(name));
        const Json result{{"parameter", r.parameter},
                          {"overlap", r.overlap},
                          {"grid", r.grid},
                          {"prior_density", r.prior_density},
                          {"posterior_density", r.posterior_density}};
        run.emit("ppo.json", result.dump(2) + "\n");
        run.commit();
        run.out << "PPO(" << name << ") " << fixed(r.overlap, 1) << "%\n";
        return kExitOk;
    }

    const PosteriorSummary s = summarize(std::move(draws));
    Json params = Json::array();
    double worst = 1.0;
    for (const auto& p : s.parameters) {
        params.push_back(to_json(p));
        if (std::isfinite(p.rhat)) worst = std::max(worst, p.rhat);
    }
    run.emit("convergence.json", Json{{"parameters", params}, {"max_rhat", worst}}.dump(2) + "\n");
    run.commit();
    run.out << "max split R-hat " << fixed(worst) << " over " << s.parameters.size() << " parameters\n";
    if (worst > kRhatLimit) {
        run.err << "warning: max split R-hat exceeds " << kRhatLimit << "\n";
        if (o.strict) return kExitNotConverged;
    }
    return kExitOk;
}

// forest

struct ForestOptions {
    std::string data, parameter = "theta";
    std::vector<std::string> fits;
};

int cmd_forest(Run& run, const ForestOptions& o) {
    const auto studies = load_studies(run, o.data);
    std::vector<std::pair<std::string, ParameterSummary>> fits;
    for (const auto& spec : o.fits) {
        const auto eq = spec.find('=');
        const std::string label = eq == std::string::npos ? o.parameter : spec.substr(0, eq);
        const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
        run.input(path);
        bool found = false;
        for (const auto& p : parameters_from_fit_json(parse_json_argument("@" + path))) {
            if (p.name == o.parameter) {
                fits.emplace_back(label, p);
                found = true;
            }
        }
        if (!found) throw Error(ErrorCode::MissingField, path + " has no parameter '" + o.parameter + "'");
    }
    run.seed();
    run.config = Json{{"parameter", o.parameter}, {"fits", o.fits}};
    const ForestData f = forest(studies, fits);
    run.emit("forest.csv", forest_csv(f));
    run.emit("forest.svg", forest_svg(f));
    run.commit();
    run.out << f.rows.size() << " rows, " << f.diamonds.size() << " diamonds\n";
    return kExitOk;
}

// moments

int cmd_moments(Run& run, const std::string& data) {
    const auto studies = load_studies(run, data);
    run.seed();
    Json rows = Json::array();
    for (const auto& s : studies) {
        const StudyMoments m = recover_moments(s);
        rows.push_back(Json{{"study_id", s.study_id}, {"sigma", m.sigma}, {"lambda", m.lambda}, {"mu", m.mu}});
        run.out << s.study_id << ": sigma " << fixed(m.sigma) << ", lambda " << fixed(m.lambda) << ", mu " << fixed(m.mu)
                << "\n";
    }
    run.emit("moments.json", rows.dump(2) + "\n");
    run.commit();
    return kExitOk;
}

// replay

int cmd_replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& out, std::ostream& err) {
    const RunManifest m = manifest_from_json(parse_json_argument("@" + manifest_path));
    if (m.arguments.empty() || m.arguments.front() == "replay") {
        throw Error(ErrorCode::SchemaError, manifest_path + ": manifest has no replayable command");
    }
    for (const auto& [path, digest] : m.inputs) {
        if (sha256_file(path) != digest) throw Error(ErrorCode::DomainError, "input '" + path + "' changed since the run");
    }
    const fs::path original = fs::weakly_canonical(fs::absolute(manifest_path)).parent_path();
    if (fs::weakly_canonical(fs::absolute(out_dir)) == original) {
        throw Error(ErrorCode::DomainError, "replay needs an output directory different from the original run");
    }
    std::vector<std::string> args = m.arguments;
    args.push_back("--out");
    args.push_back(out_dir);
    std::ostringstream quiet;
    const int code = run(args, quiet, err);
    if (code != kExitOk && code != kExitNotConverged) return code;
    std::vector<std::string> differ;
    for (const auto& [name, digest] : m.outputs) {
        const fs::path p = fs::path(out_dir) / name;
        if (!fs::exists(p) || sha256_file(p) != digest) differ.push_back(name);
    }
    if (!differ.empty()) {
        for (const auto& d : differ) err << "replay: " << d << " differs\n";
        return kExitNumeric;
    }
    out << "replay: " << m.outputs.size() << " outputs identical\n";
    return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bayesian meta-analysis with measurement error", "mema"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);
    Run ctx(args, out, err);
    std::function<int()> action;

    FitOptions fo;
    auto* fit = app.add_subcommand("fit", "Fit a model by MCMC; writes fit.json, manifest.json and optionally draws.csv");
    fit->add_option("--data", fo.data, "Study summary CSV, or long-format IPD CSV for multiIPD/multiMA")->required();
    fit->add_option("--model", fo.model, "Model JSON, or @file")->required();
    fit->add_option("--config", fo.config, "MCMC config JSON, or @file");
    fit->add_option("--chains", fo.chains, "Number of chains (default 3)")->check(CLI::PositiveNumber);
    fit->add_option("--threads", fo.threads, "Worker threads (0 = all cores); results do not depend on it")
        ->check(CLI::NonNegativeNumber);
    fit->add_option("--iterations", fo.iterations, "Iterations per chain (default 100000)")->check(CLI::PositiveNumber);
    fit->add_option("--thin", fo.thin, "Thinning interval (default 10)")->check(CLI::PositiveNumber);
    fit->add_option("--burn-in", fo.burn_in, "Burn-in iterations (default iterations / 2)")->check(CLI::NonNegativeNumber);
    fit->add_flag("--draws", fo.draws, "Also write draws.csv");
    fit->add_flag("--strict", fo.strict, "Exit 4 when split R-hat exceeds 1.05");
    add_run_options(fit, ctx);
    fit->callback([&] { action = [&] { return cmd_fit(ctx, fo); }; });

    IdentifyOptions io;
    auto* identify = app.add_subcommand("identify", "Identification region for theta under gamma and tau bounds");
    identify->add_option("--data", io.data, "CSV with study_id,beta_star,gamma_lower")->required();
    identify->add_option("--tau-bar", io.tau_bar, "Upper bound on tau; repeat for several regions")->required();
    identify->add_option("--grid-step", io.grid_step, "Scan step")->capture_default_str()->check(CLI::PositiveNumber);
    identify->add_flag("--svg", io.svg, "Also write identification.svg");
    add_run_options(identify, ctx);
    identify->callback([&] { action = [&] { return cmd_identify(ctx, io); }; });

    CorruptOptions co;
    auto* corrupt = app.add_subcommand("corrupt", "Add measurement error to IPD covariates");
    corrupt->add_option("--data", co.data, "Long-format IPD CSV (study_id,y,x1,...)")->required();
    corrupt->add_option("--plan", co.plan, "Plan CSV: study_id,phi or study_id,phi_11,phi_12,...")->required();
    corrupt->add_flag("--summaries", co.summaries, "Also write refitted study summaries (Q = 1 only)");
    add_run_options(corrupt, ctx);
    corrupt->callback([&] { action = [&] { return cmd_corrupt(ctx, co); }; });

    BiasOptions bo;
    auto* bias = app.add_subcommand("bias", "Naive-estimate algebra from the gamma column of a summary CSV");
    bias->add_option("quantity", bo.quantity, "gamma | theta-star | tau-star")
        ->required()
        ->check(CLI::IsMember({"gamma", "theta-star", "tau-star"}));
    bias->add_option("--data", bo.data, "Study summary CSV with a gamma column")->required();
    bias->add_option("--theta", bo.theta, "True mean slope");
    bias->add_option("--tau", bo.tau, "True between-study s.d.");
    bias->add_option("--form", bo.form, "tau*^2 form: alternative (E(gamma^2) tau^2 + Var(gamma) theta^2) or first")
        ->capture_default_str()
        ->check(CLI::IsMember({"alternative", "first"}));
    add_run_options(bias, ctx);
    bias->callback([&] { action = [&] { return cmd_bias(ctx, bo); }; });

    DiagnoseOptions dop;
    auto* diagnose = app.add_subcommand("diagnose", "Prior-posterior overlap, measurement-error correlation test, convergence");
    diagnose->add_option("what", dop.what, "ppo | het | convergence")
        ->required()
        ->check(CLI::IsMember({"ppo", "het", "convergence"}));
    diagnose->add_option("--data", dop.data, "Study summary CSV (het)");
    diagnose->add_option("--draws", dop.draws, "draws.csv from fit --draws (ppo, convergence)");
    diagnose->add_option("--parameter", dop.parameter, "Parameter name (ppo)");
    diagnose->add_option("--prior", dop.prior, "Prior JSON, or @file (ppo)");
    diagnose->add_option("--permutations", dop.permutations, "Permutations (het)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    diagnose->add_flag("--strict", dop.strict, "Exit 4 when split R-hat exceeds 1.05 (convergence)");
    add_run_options(diagnose, ctx);
    diagnose->callback([&] { action = [&] { return cmd_diagnose(ctx, dop); }; });

    ForestOptions fopt;
    auto* forest_cmd = app.add_subcommand("forest", "Forest plot data and SVG");
    forest_cmd->add_option("--data", fopt.data, "Study summary CSV")->required();
    forest_cmd->add_option("--fit", fopt.fits, "fit.json, optionally as label=path; repeat for stacked diamonds");
    forest_cmd->add_option("--parameter", fopt.parameter, "Summary parameter for the diamonds")->capture_default_str();
    add_run_options(forest_cmd, ctx);
    forest_cmd->callback([&] { action = [&] { return cmd_forest(ctx, fopt); }; });

    std::string moments_data;
    auto* moments = app.add_subcommand("moments", "Recover sigma, lambda and mu from study summaries");
    moments->add_option("--data", moments_data, "Study summary CSV with bivariate fields")->required();
    add_run_options(moments, ctx);
    moments->callback([&] { action = [&] { return cmd_moments(ctx, moments_data); }; });

    std::string manifest_path, replay_out;
    auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest and compare output digests");
    replay->add_option("--manifest", manifest_path, "manifest.json of the original run")->required();
    replay->add_option("--out", replay_out, "Output directory for the re-run")->required();
    replay->callback([&] { action = [&] { return cmd_replay(manifest_path, replay_out, out, err); }; });

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        return action();
    } catch (const Error& e) {
        err << "mema: " << e.what() << "\n";
        return is_input_error(e.code()) ? kExitInput : kExitNumeric;
    } catch (const std::exception& e) {
        err << "mema: " << e.what() << "\n";
        return kExitNumeric;
    }
}

}  // namespace mema::cli
