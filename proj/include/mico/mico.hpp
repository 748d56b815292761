#pragma once

#include "mico/checkpoint.hpp"
#include "mico/ckg.hpp"
#include "mico/dataset.hpp"
#include "mico/encoder.hpp"
#include "mico/errors.hpp"
#include "mico/evaluation.hpp"
#include "mico/io.hpp"
#include "mico/loss.hpp"
#include "mico/optim.hpp"
#include "mico/synthetic.hpp"
#include "mico/text.hpp"
#include "mico/trainer.hpp"
