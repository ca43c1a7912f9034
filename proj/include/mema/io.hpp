#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mema/mcmc.hpp"
#include "mema/models.hpp"
#include "mema/priors.hpp"
#include "mema/summary.hpp"

namespace mema {

using Json = nlohmann::ordered_json;

/// Priors as {"family": "Normal", "mean": 0, "variance": 100}, etc. Unknown
/// families and keys are SchemaError.
Json to_json(const PriorSpec& prior);
PriorSpec prior_from_json(const Json& j);

/// {"kind", "k_prime_ids", "gamma_prior", "delta", "truncation", "priors"};
/// only "kind" is required and "priors" may override any subset.
Json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const Json& j);

/// {"chains", "iterations", "thin", "burn_in", "seed", "adapt_window", "threads"}.
Json to_json(const McmcConfig& config);
McmcConfig mcmc_config_from_json(const Json& j, McmcConfig base = {});

Json to_json(const ParameterSummary& p);
ParameterSummary parameter_summary_from_json(const Json& j);

/// Summaries, acceptance rates and warnings; the draws are written separately.
Json to_json(const PosteriorSummary& summary);
std::vector<ParameterSummary> parameters_from_fit_json(const Json& j);

/// Header `chain,draw,<names>`.
std::string format_draws_csv(const Draws& draws);
Draws parse_draws_csv(const std::string& text, const std::string& source = "<string>");

/// JSON text, or `@path` to read it from a file. ParseError on bad JSON.
Json parse_json_argument(const std::string& text);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename.
void write_file(const std::filesystem::path& path, const std::string& contents);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

inline constexpr const char* kToolVersion = "0.1.0";

/// Everything needed to re-run a command: its arguments with the seed made
/// explicit, digests of inputs and outputs, and the resolved configuration.
struct RunManifest {
    std::string command;
    std::vector<std::string> arguments;
    std::map<std::string, std::string> inputs;   // path -> sha256
    std::map<std::string, std::string> outputs;  // file name -> sha256
    Json config = Json::object();
    std::uint64_t seed = 0;
    std::string version = kToolVersion;
    double duration_seconds = 0.0;
};

Json to_json(const RunManifest& m);
RunManifest manifest_from_json(const Json& j);

}  // namespace mema
