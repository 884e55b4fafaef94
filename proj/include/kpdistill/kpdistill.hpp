#pragma once

#include "kpdistill/distillation.hpp"
#include "kpdistill/encoders.hpp"
#include "kpdistill/errors.hpp"
#include "kpdistill/evaluation.hpp"
#include "kpdistill/losses.hpp"
#include "kpdistill/numerics.hpp"
#include "kpdistill/pipeline.hpp"
#include "kpdistill/retrieval.hpp"
#include "kpdistill/rng.hpp"
#include "kpdistill/synthworld.hpp"
#include "kpdistill/tensor.hpp"
#include "kpdistill/trainer.hpp"
