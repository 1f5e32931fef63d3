#pragma once

#include "unpg/error.hpp"
#include "unpg/eval.hpp"
#include "unpg/loss.hpp"
#include "unpg/margins.hpp"
#include "unpg/pairgen.hpp"
#include "unpg/sphere.hpp"
#include "unpg/trainer.hpp"
