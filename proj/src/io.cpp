#include "mema/io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "mema/csv.hpp"
#include "mema/error.hpp"

namespace mema {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& what) {
    if (!j.is_object()) throw Error(ErrorCode::SchemaError, what + " must be a JSON object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : j.items()) {
        if (!ok.count(key)) throw Error(ErrorCode::SchemaError, "unknown key '" + key + "' in " + what);
    }
}

double number(const Json& j, const char* key, const std::string& what) {
    if (!j.contains(key)) throw Error(ErrorCode::SchemaError, what + " is missing '" + key + "'");
    if (!j.at(key).is_number()) throw Error(ErrorCode::SchemaError, std::string("'") + key + "' in " + what + " must be a number");
    return j.at(key).get<double>();
}

double number_or(const Json& j, const char* key, double fallback, const std::string& what) {
    return j.contains(key) ? number(j, key, what) : fallback;
}

long integer(const Json& j, const char* key, const std::string& what) {
    const double v = number(j, key, what);
    if (v != std::floor(v)) throw Error(ErrorCode::SchemaError, std::string("'") + key + "' in " + what + " must be an integer");
    return static_cast<long>(v);
}

std::string string_field(const Json& j, const char* key, const std::string& what) {
    if (!j.at(key).is_string()) throw Error(ErrorCode::SchemaError, std::string("'") + key + "' in " + what + " must be a string");
    return j.at(key).get<std::string>();
}

Json matrix_json(const Eigen::MatrixXd& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Json row = Json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
    if (!j.is_array() || j.empty()) throw Error(ErrorCode::SchemaError, what + " must be a non-empty array of rows");
    const auto n = static_cast<Eigen::Index>(j.size());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Json& row = j.at(static_cast<std::size_t>(i));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
            throw Error(ErrorCode::SchemaError, what + " must be square");
        }
        for (Eigen::Index k = 0; k < n; ++k) {
            if (!row.at(static_cast<std::size_t>(k)).is_number()) throw Error(ErrorCode::SchemaError, what + " entries must be numbers");
            m(i, k) = row.at(static_cast<std::size_t>(k)).get<double>();
        }
    }
    return m;
}

}  // namespace

Json to_json(const PriorSpec& prior) {
    return std::visit(overloaded{
                          [](const prior::Normal& d) { return Json{{"family", "Normal"}, {"mean", d.mean}, {"variance", d.variance}}; },
                          [](const prior::HalfCauchy& d) {
                              return Json{{"family", "HalfCauchy"}, {"location", d.location}, {"scale", d.scale}};
                          },
                          [](const prior::Uniform& d) { return Json{{"family", "Uniform"}, {"lo", d.lo}, {"hi", d.hi}}; },
                          [](const prior::Exponential& d) { return Json{{"family", "Exponential"}, {"rate", d.rate}}; },
                          [](const prior::InvGamma& d) { return Json{{"family", "InvGamma"}, {"shape", d.shape}, {"scale", d.scale}}; },
                          [](const prior::InvWishart& d) {
                              return Json{{"family", "InvWishart"}, {"scale", matrix_json(d.scale)}, {"df", d.df}};
                          },
                      },
                      prior);
}

PriorSpec prior_from_json(const Json& j) {
    const std::string what = "prior";
    if (!j.is_object() || !j.contains("family")) throw Error(ErrorCode::SchemaError, "prior must be an object with a 'family'");
    const std::string family = string_field(j, "family", what);
    PriorSpec out;
    if (family == "Normal") {
        check_keys(j, {"family", "mean", "variance"}, what);
        out = prior::Normal{number_or(j, "mean", 0.0, what), number_or(j, "variance", 1.0, what)};
    } else if (family == "HalfCauchy") {
        check_keys(j, {"family", "location", "scale"}, what);
        out = prior::HalfCauchy{number_or(j, "location", 0.0, what), number_or(j, "scale", 1.0, what)};
    } else if (family == "Uniform") {
        check_keys(j, {"family", "lo", "hi"}, what);
        out = prior::Uniform{number_or(j, "lo", 0.0, what), number_or(j, "hi", 1.0, what)};
    } else if (family == "Exponential") {
        check_keys(j, {"family", "rate"}, what);
        out = prior::Exponential{number_or(j, "rate", 1.0, what)};
    } else if (family == "InvGamma") {
        check_keys(j, {"family", "shape", "scale"}, what);
        out = prior::InvGamma{number_or(j, "shape", 1.0, what), number_or(j, "scale", 1.0, what)};
    } else if (family == "InvWishart") {
        check_keys(j, {"family", "scale", "df"}, what);
        prior::InvWishart iw;
        if (j.contains("scale")) iw.scale = matrix_from_json(j.at("scale"), "InvWishart scale");
        iw.df = number_or(j, "df", 1.0, what);
        out = iw;
    } else {
        throw Error(ErrorCode::SchemaError, "unknown prior family '" + family + "'");
    }
    try {
        validate(out);
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
    return out;
}

namespace {

const std::vector<std::pair<const char*, PriorSpec PriorSet::*>> kPriorFields = {
    {"theta", &PriorSet::theta}, {"xi", &PriorSet::xi},       {"tau", &PriorSet::tau}, {"omega", &PriorSet::omega},
    {"rho", &PriorSet::rho},     {"sigma", &PriorSet::sigma}, {"mu", &PriorSet::mu},
};

}  // namespace

Json to_json(const ModelSpec& spec) {
    Json j;
    j["kind"] = to_string(spec.kind);
    if (spec.k_prime_ids) j["k_prime_ids"] = Json(std::vector<std::string>(spec.k_prime_ids->begin(), spec.k_prime_ids->end()));
    j["gamma_prior"] = to_string(spec.resolved_gamma_prior());
    j["delta"] = spec.delta;
    j["truncation"] = to_string(spec.truncation);
    Json priors;
    for (const auto& [name, field] : kPriorFields) priors[name] = to_json(spec.priors.*field);
    j["priors"] = priors;
    return j;
}

ModelSpec model_spec_from_json(const Json& j) {
    const std::string what = "model";
    check_keys(j, {"kind", "k_prime_ids", "gamma_prior", "delta", "truncation", "priors"}, what);
    if (!j.contains("kind")) throw Error(ErrorCode::SchemaError, "model is missing 'kind'");
    ModelSpec spec;
    spec.kind = parse_model_kind(string_field(j, "kind", what));
    if (j.contains("k_prime_ids")) {
        const Json& ids = j.at("k_prime_ids");
        if (!ids.is_array()) throw Error(ErrorCode::SchemaError, "'k_prime_ids' must be an array");
        std::set<std::string> out;
        for (const auto& id : ids) {
            if (id.is_string()) {
                out.insert(id.get<std::string>());
            } else if (id.is_number_integer()) {
                out.insert(std::to_string(id.get<long long>()));
            } else {
                throw Error(ErrorCode::SchemaError, "'k_prime_ids' entries must be strings or integers");
            }
        }
        spec.k_prime_ids = std::move(out);
    }
    if (j.contains("gamma_prior")) spec.gamma_prior = parse_gamma_prior(string_field(j, "gamma_prior", what));
    if (j.contains("delta")) spec.delta = number(j, "delta", what);
    if (j.contains("truncation")) spec.truncation = parse_truncation(string_field(j, "truncation", what));
    if (j.contains("priors")) {
        const Json& p = j.at("priors");
        if (!p.is_object()) throw Error(ErrorCode::SchemaError, "'priors' must be an object");
        for (const auto& [key, value] : p.items()) {
            bool found = false;
            for (const auto& [name, field] : kPriorFields) {
                if (key == name) {
                    spec.priors.*field = prior_from_json(value);
                    found = true;
                }
            }
            if (!found) throw Error(ErrorCode::SchemaError, "unknown prior '" + key + "'");
        }
    }
    try {
        validate(spec);
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
    return spec;
}

Json to_json(const McmcConfig& c) {
    return Json{{"chains", c.chains},       {"iterations", c.iterations},     {"thin", c.thin},
                {"burn_in", c.resolved_burn_in()}, {"seed", c.seed}, {"adapt_window", c.adapt_window},
                {"threads", c.threads}};
}

McmcConfig mcmc_config_from_json(const Json& j, McmcConfig c) {
    const std::string what = "config";
    check_keys(j, {"chains", "iterations", "thin", "burn_in", "seed", "adapt_window", "threads"}, what);
    if (j.contains("chains")) c.chains = static_cast<int>(integer(j, "chains", what));
    if (j.contains("iterations")) c.iterations = integer(j, "iterations", what);
    if (j.contains("thin")) c.thin = integer(j, "thin", what);
    if (j.contains("burn_in")) c.burn_in = integer(j, "burn_in", what);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw Error(ErrorCode::SchemaError, "'seed' must be a non-negative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("adapt_window")) c.adapt_window = integer(j, "adapt_window", what);
    if (j.contains("threads")) c.threads = static_cast<int>(integer(j, "threads", what));
    try {
        validate(c);
    } catch (const Error& e) {
        throw Error(ErrorCode::SchemaError, e.what());
    }
    return c;
}

Json to_json(const ParameterSummary& p) {
    return Json{{"name", p.name}, {"mean", p.mean},   {"sd", p.sd},     {"median", p.median},
                {"q025", p.q025}, {"q975", p.q975}, {"ess", p.ess}, {"rhat", p.rhat}};
}

ParameterSummary parameter_summary_from_json(const Json& j) {
    const std::string what = "parameter summary";
    if (!j.is_object() || !j.contains("name")) throw Error(ErrorCode::SchemaError, what + " needs a 'name'");
    ParameterSummary p;
    p.name = string_field(j, "name", what);
    p.mean = number(j, "mean", what);
    p.sd = number(j, "sd", what);
    p.median = number(j, "median", what);
    p.q025 = number(j, "q025", what);
    p.q975 = number(j, "q975", what);
    p.ess = number_or(j, "ess", 0.0, what);
    p.rhat = number_or(j, "rhat", 1.0, what);
    return p;
}

Json to_json(const PosteriorSummary& s) {
    Json params = Json::array();
    for (const auto& p : s.parameters) params.push_back(to_json(p));
    Json acc = Json::object();
    for (std::size_t b = 0; b < s.block_names.size(); ++b) {
        Json per_chain = Json::array();
        for (const auto& chain : s.acceptance) per_chain.push_back(chain.at(b));
        acc[s.block_names[b]] = per_chain;
    }
    return Json{{"chains", s.draws.chains.size()},
                {"draws_per_chain", s.draws.draws_per_chain()},
                {"parameters", params},
                {"acceptance", acc},
                {"warnings", s.warnings}};
}

std::vector<ParameterSummary> parameters_from_fit_json(const Json& j) {
    if (!j.is_object() || !j.contains("parameters") || !j.at("parameters").is_array()) {
        throw Error(ErrorCode::SchemaError, "fit JSON needs a 'parameters' array");
    }
    std::vector<ParameterSummary> out;
    for (const auto& p : j.at("parameters")) out.push_back(parameter_summary_from_json(p));
    return out;
}

std::string format_draws_csv(const Draws& draws) {
    std::string out = "chain,draw";
    for (const auto& n : draws.names) out += "," + n;
    out += "\n";
    for (std::size_t c = 0; c < draws.chains.size(); ++c) {
        const auto& m = draws.chains[c];
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            out += std::to_string(c + 1) + "," + std::to_string(i + 1);
            for (Eigen::Index k = 0; k < m.cols(); ++k) out += "," + csv::format_double(m(i, k));
            out += "\n";
        }
    }
    return out;
}

Draws parse_draws_csv(const std::string& text, const std::string& source) {
    const csv::Table t = csv::parse(text, source);
    if (t.header.size() < 3 || t.header[0] != "chain" || t.header[1] != "draw") {
        throw Error(ErrorCode::SchemaError, source + ": draws need a 'chain,draw,...' header");
    }
    Draws d;
    d.names.assign(t.header.begin() + 2, t.header.end());
    std::vector<std::vector<std::vector<double>>> rows;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const long long chain = csv::to_integer(t, r, 0);
        if (chain < 1) throw Error(ErrorCode::DomainError, csv::location(t, r, 0) + ": chain numbers start at 1");
        if (rows.size() < static_cast<std::size_t>(chain)) rows.resize(static_cast<std::size_t>(chain));
        std::vector<double> v;
        for (std::size_t k = 2; k < t.header.size(); ++k) v.push_back(csv::to_double(t, r, k));
        rows[static_cast<std::size_t>(chain - 1)].push_back(std::move(v));
    }
    if (rows.empty()) throw Error(ErrorCode::EmptyInput, source + ": no draws");
    for (const auto& chain : rows) {
        if (chain.size() != rows.front().size()) throw Error(ErrorCode::RaggedData, source + ": chains differ in length");
        Eigen::MatrixXd m(static_cast<Eigen::Index>(chain.size()), static_cast<Eigen::Index>(d.names.size()));
        for (std::size_t i = 0; i < chain.size(); ++i) {
            for (std::size_t k = 0; k < d.names.size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = chain[i][k];
        }
        d.chains.push_back(std::move(m));
    }
    return d;
}

Json parse_json_argument(const std::string& text) {
    const bool from_file = !text.empty() && text.front() == '@';
    const std::string body = from_file ? read_file(text.substr(1)) : text;
    try {
        return Json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, (from_file ? text.substr(1) : std::string("JSON argument")) + ": " + e.what());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
        out << contents;
        if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "': " + ec.message());
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::IoError, "SHA-256 failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

Json to_json(const RunManifest& m) {
    return Json{{"command", m.command},         {"arguments", m.arguments}, {"inputs", m.inputs},
                {"outputs", m.outputs},         {"config", m.config},       {"seed", m.seed},
                {"version", m.version},         {"duration_seconds", m.duration_seconds}};
}

RunManifest manifest_from_json(const Json& j) {
    check_keys(j, {"command", "arguments", "inputs", "outputs", "config", "seed", "version", "duration_seconds"}, "manifest");
    RunManifest m;
    try {
        m.command = j.at("command").get<std::string>();
        m.arguments = j.at("arguments").get<std::vector<std::string>>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.config = j.value("config", Json::object());
        m.seed = j.at("seed").get<std::uint64_t>();
        m.version = j.at("version").get<std::string>();
        m.duration_seconds = j.value("duration_seconds", 0.0);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::SchemaError, std::string("manifest: ") + e.what());
    }
    return m;
}

}  // namespace mema
