#pragma once

#include "ebsde/error.hpp"
#include "ebsde/chain.hpp"
#include "ebsde/driver.hpp"
#include "ebsde/perturbation.hpp"
#include "ebsde/discounted.hpp"
#include "ebsde/ebsde.hpp"
#include "ebsde/control.hpp"
#include "ebsde/simulation.hpp"
#include "ebsde/table51.hpp"
