#pragma once

// Deterministic end-to-end scenarios, each driven through an in-process
// service over the real wire protocol. Same (fixture, seed, start) in, same
// transcript bytes out.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "umgr/marketplace.hpp"

namespace umgr {

struct ScenarioSpec {
    std::string name;
    std::filesystem::path fixture_path;  // fixtures/<name>
    std::uint64_t seed = 1;
};

const std::vector<std::string>& scenario_names();

// Seeds the stores from the fixture, starts a service, walks the scenario
// over the wire, stops the service, and verifies the audit store. Throws on
// any invariant violation; expected denials are part of the transcript.
std::string run_scenario(const ScenarioSpec& spec, const StorePaths& stores,
                         Timestamp start);

// Fixture loaders, shared with the CLI.
MarketplaceState seed_state_from_fixture(const std::filesystem::path& fixture_path);

}  // namespace umgr
