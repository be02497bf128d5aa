#pragma once

// Independent MAC count: every layer spelled out as the list of matrix
// products it performs.

#include <random>

#include "skillsight/power.hpp"

namespace oracle {

skillsight::power::Count oracle_macs(const skillsight::power::Architecture& a);

// Random layer of any supported kind with small dimensions.
skillsight::power::Layer random_layer(std::mt19937_64& rng);

}  // namespace oracle
