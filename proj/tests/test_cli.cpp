#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "cli.hpp"
#include "mema/io.hpp"
#include "test_support.hpp"

using namespace mema;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result mema_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mema-test-" + name);
    fs::remove_all(p);
    return p;
}

std::string data(const std::string& name) { return test_data(name).string(); }

}  // namespace

TEST_CASE("prior and model JSON round trip") {
    ModelSpec s;
    s.kind = ModelKind::BiBMEMA;
    s.k_prime_ids = std::set<std::string>{"1", "2"};
    s.delta = 0.5;
    s.priors.tau = prior::Uniform{0.0, 10.0};
    const ModelSpec back = model_spec_from_json(to_json(s));
    CHECK(back.kind == s.kind);
    CHECK(*back.k_prime_ids == *s.k_prime_ids);
    CHECK(back.delta == 0.5);
    CHECK(to_json(back) == to_json(s));
    const ModelSpec ints = model_spec_from_json(Json::parse(R"({"kind":"uniBMEMA","k_prime_ids":[1,2,3]})"));
    CHECK(ints.k_prime_ids->count("3"));
    CHECK(error_code_of([] { model_spec_from_json(Json::parse(R"({"kind":"uniMA","dleta":1})")); }) ==
          ErrorCode::SchemaError);
    CHECK(error_code_of([] { model_spec_from_json(Json::parse(R"({"delta":1})")); }) == ErrorCode::SchemaError);
    CHECK(error_code_of([] { prior_from_json(Json::parse(R"({"family":"Normal","variance":-1})")); }) ==
          ErrorCode::SchemaError);
    prior::InvWishart iw;
    iw.scale = Eigen::MatrixXd::Identity(2, 2) * 3.0;
    iw.df = 4;
    CHECK(to_json(prior_from_json(to_json(PriorSpec{iw}))) == to_json(PriorSpec{iw}));
}

TEST_CASE("mcmc config JSON") {
    const McmcConfig c = mcmc_config_from_json(Json::parse(R"({"chains":4,"iterations":2000,"thin":2,"seed":9})"));
    CHECK(c.chains == 4);
    CHECK(c.resolved_burn_in() == 1000);
    CHECK(mcmc_config_from_json(to_json(c)).seed == 9);
    CHECK(error_code_of([] { mcmc_config_from_json(Json::parse(R"({"thin":3,"iterations":1000})")); }) ==
          ErrorCode::SchemaError);
}

TEST_CASE("draws CSV round trip") {
    Draws d;
    d.names = {"a", "b"};
    d.chains = {Eigen::MatrixXd::Random(4, 2), Eigen::MatrixXd::Random(4, 2)};
    const Draws back = parse_draws_csv(format_draws_csv(d));
    CHECK(back.names == d.names);
    CHECK(back.chains[1] == d.chains[1]);
}

TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("fit writes results and a manifest that replays bit-exactly") {
    const fs::path dir = scratch("fit");
    const Result r = mema_cli({"fit", "--data", data("nels88.csv"), "--model", R"({"kind":"uniMA"})", "--iterations",
                               "4000", "--draws", "--seed", "5", "--out", dir.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("theta ", 0) == 0);
    CHECK(fs::exists(dir / "fit.json"));
    CHECK(fs::exists(dir / "draws.csv"));
    const RunManifest m = manifest_from_json(parse_json_argument("@" + (dir / "manifest.json").string()));
    CHECK(m.seed == 5);
    CHECK(m.command == "fit");
    CHECK(m.inputs.at(data("nels88.csv")) == sha256_file(data("nels88.csv")));
    CHECK(m.outputs.at("fit.json") == sha256_file(dir / "fit.json"));

    const fs::path again = scratch("fit-replay");
    const Result rr = mema_cli({"replay", "--manifest", (dir / "manifest.json").string(), "--out", again.string()});
    CHECK(rr.code == 0);
    CHECK(sha256_file(again / "draws.csv") == sha256_file(dir / "draws.csv"));
    fs::remove_all(dir);
    fs::remove_all(again);
}

TEST_CASE("seed falls back to MEMA_SEED") {
    const fs::path a = scratch("seed-a"), b = scratch("seed-b");
    setenv("MEMA_SEED", "31", 1);
    const std::vector<std::string> base = {"fit", "--data", data("nels88.csv"), "--model", R"({"kind":"uniMA"})",
                                           "--iterations", "2000"};
    auto args = base;
    args.insert(args.end(), {"--out", a.string()});
    REQUIRE(mema_cli(args).code == 0);
    unsetenv("MEMA_SEED");
    args = base;
    args.insert(args.end(), {"--seed", "31", "--out", b.string()});
    REQUIRE(mema_cli(args).code == 0);
    CHECK(sha256_file(a / "fit.json") == sha256_file(b / "fit.json"));
    CHECK(manifest_from_json(parse_json_argument("@" + (a / "manifest.json").string())).seed == 31);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("exit codes") {
    const fs::path dir = scratch("codes");
    const Result missing = mema_cli({"fit", "--data", "/nonexistent.csv", "--model", R"({"kind":"uniMA"})", "--out",
                                     dir.string()});
    CHECK(missing.code == 2);
    CHECK_FALSE(fs::exists(dir));
    CHECK(mema_cli({"fit", "--data", data("nels88.csv"), "--model", "{bad json", "--out", dir.string()}).code == 2);
    CHECK(mema_cli({"fit", "--data", data("nels88.csv"), "--model", R"({"kind":"uniMA"})", "--frobnicate"}).code == 2);
    CHECK(mema_cli({"nosuchcommand"}).code == 2);
    CHECK(mema_cli({}).code == 2);
    CHECK(mema_cli({"fit", "--seed", "-3", "--data", data("nels88.csv"), "--model", R"({"kind":"uniMA"})", "--out",
                    dir.string()})
              .code == 2);
    // Too short to converge: the R-hat check escalates under --strict.
    const Result strict = mema_cli({"fit", "--data", data("nels88star.csv"), "--model",
                                    R"({"kind":"biBMEMA","k_prime_ids":[]})", "--iterations", "200", "--thin", "1",
                                    "--strict", "--out", dir.string()});
    CHECK(strict.code == 4);
    CHECK(fs::exists(dir / "fit.json"));
    const Result empty = mema_cli({"identify", "--data", data("nels88.csv"), "--tau-bar", "0", "--out", dir.string()});
    CHECK(empty.code == 2);
    fs::remove_all(dir);
}

TEST_CASE("every subcommand documents its flags") {
    for (const char* cmd : {"fit", "identify", "corrupt", "bias", "diagnose", "forest", "moments", "replay"}) {
        const Result r = mema_cli({cmd, "--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("--") != std::string::npos);
        if (std::string(cmd) != "replay") CHECK(r.out.find("--seed") != std::string::npos);
    }
}

TEST_CASE("identify and bias reproduce the worked examples") {
    const fs::path dir = scratch("identify");
    const Result r =
        mema_cli({"identify", "--data", data("fig2_identification.csv"), "--tau-bar", "0.5", "--svg", "--out", dir.string()});
    REQUIRE(r.code == 0);
    const Json j = parse_json_argument("@" + (dir / "identification.json").string());
    CHECK(std::abs(j.at("lo").get<double>() - 0.6) <= 0.05);
    CHECK(std::abs(j.at("hi").get<double>() - 2.9) <= 0.05);
    CHECK(fs::exists(dir / "identification.svg"));
    CHECK(fs::exists(dir / "manifest.json"));

    const Result b = mema_cli({"bias", "theta-star", "--data", data("nels88star.csv"), "--theta", "0.57", "--out",
                               dir.string()});
    REQUIRE(b.code == 0);
    const Json bj = parse_json_argument("@" + (dir / "bias.json").string());
    CHECK(std::abs(bj.at("theta_star").get<double>() - 0.36) <= 0.01);
    CHECK(mema_cli({"bias", "tau-star", "--data", data("nels88star.csv"), "--theta", "0.57", "--out", dir.string()})
              .code == 2);
    fs::remove_all(dir);
}

TEST_CASE("corrupt is deterministic") {
    const fs::path src = scratch("corrupt-src");
    fs::create_directories(src);
    write_file(src / "ipd.csv", "study_id,y,x1\n1,1.0,0.5\n1,2.0,1.5\n1,2.5,2.0\n2,0.1,0.2\n2,0.4,0.1\n2,0.3,0.6\n");
    write_file(src / "plan.csv", "study_id,phi\n1,0.5\n2,0\n");
    const auto run = [&](const std::string& out) {
        return mema_cli({"corrupt", "--data", (src / "ipd.csv").string(), "--plan", (src / "plan.csv").string(), "--seed",
                         "7", "--out", (src / out).string()});
    };
    REQUIRE(run("a").code == 0);
    REQUIRE(run("b").code == 0);
    CHECK(sha256_file(src / "a" / "corrupted.csv") == sha256_file(src / "b" / "corrupted.csv"));
    const IpdDataset d = load_ipd(src / "a" / "corrupted.csv");
    CHECK(d.studies[1].x(0, 0) == 0.2);
    CHECK(d.studies[0].x(0, 0) != 0.5);
    fs::remove_all(src);
}

TEST_CASE("diagnose, forest and moments commands") {
    const fs::path dir = scratch("diag");
    REQUIRE(mema_cli({"fit", "--data", data("nels88.csv"), "--model", R"({"kind":"uniMA"})", "--iterations", "10000",
                      "--draws", "--out", (dir / "fit").string()})
                .code == 0);
    const std::string draws = (dir / "fit" / "draws.csv").string();
    const Result p = mema_cli({"diagnose", "ppo", "--draws", draws, "--parameter", "theta", "--prior",
                               R"({"family":"Normal","mean":0,"variance":100})", "--out", (dir / "ppo").string()});
    CHECK(p.code == 0);
    CHECK(mema_cli({"diagnose", "ppo", "--draws", draws, "--parameter", "theta", "--out", (dir / "x").string()}).code == 2);
    CHECK(mema_cli({"diagnose", "convergence", "--draws", draws, "--out", (dir / "conv").string()}).code == 0);
    const Result h = mema_cli({"diagnose", "het", "--data", data("nels88star.csv"), "--permutations", "500", "--out",
                               (dir / "het").string()});
    CHECK(h.code == 0);
    CHECK(h.out.find("-0.65") != std::string::npos);
    const Result f = mema_cli({"forest", "--data", data("nels88.csv"), "--fit", "uniMA=" + (dir / "fit" / "fit.json").string(),
                               "--out", (dir / "forest").string()});
    CHECK(f.code == 0);
    CHECK(fs::exists(dir / "forest" / "forest.svg"));
    CHECK(mema_cli({"moments", "--data", data("nels88.csv"), "--out", (dir / "moments").string()}).code == 0);
    fs::remove_all(dir);
}
