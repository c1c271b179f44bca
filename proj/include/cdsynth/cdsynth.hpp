#pragma once

// Umbrella include.

#include "cdsynth/cd_eval.hpp"
#include "cdsynth/change_sim.hpp"
#include "cdsynth/codec.hpp"
#include "cdsynth/commands.hpp"
#include "cdsynth/config.hpp"
#include "cdsynth/dataset_io.hpp"
#include "cdsynth/denoiser.hpp"
#include "cdsynth/diffusion.hpp"
#include "cdsynth/errors.hpp"
#include "cdsynth/grid.hpp"
#include "cdsynth/mask.hpp"
#include "cdsynth/netpbm.hpp"
#include "cdsynth/nn.hpp"
#include "cdsynth/pair_gen.hpp"
#include "cdsynth/rng.hpp"
