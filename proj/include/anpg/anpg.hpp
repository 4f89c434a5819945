#pragma once

#include "anpg/rng.hpp"
#include "anpg/text_format.hpp"
#include "anpg/mdp.hpp"
#include "anpg/policy.hpp"
#include "anpg/oracle.hpp"
#include "anpg/constants.hpp"
#include "anpg/sampler.hpp"
#include "anpg/asgd.hpp"
#include "anpg/driver.hpp"
#include "anpg/stats.hpp"
#include "anpg/harness.hpp"
