#pragma once

#include "matr/autograd.hpp"
#include "matr/checkpoint.hpp"
#include "matr/config.hpp"
#include "matr/data.hpp"
#include "matr/evaluation.hpp"
#include "matr/gradcheck.hpp"
#include "matr/heads.hpp"
#include "matr/instance_decoder.hpp"
#include "matr/losses.hpp"
#include "matr/matching.hpp"
#include "matr/memory_encoder.hpp"
#include "matr/model.hpp"
#include "matr/model_gradcheck.hpp"
#include "matr/nn.hpp"
#include "matr/optim.hpp"
#include "matr/runtime.hpp"
#include "matr/tensor.hpp"
#include "matr/trainer.hpp"
#include "matr/types.hpp"
