#pragma once

// Umbrella header for the whole library.

#include "tirtrack/attention.hpp"
#include "tirtrack/autograd.hpp"
#include "tirtrack/config.hpp"
#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/decoder.hpp"
#include "tirtrack/encoder.hpp"
#include "tirtrack/grad_check.hpp"
#include "tirtrack/grad_suite.hpp"
#include "tirtrack/image.hpp"
#include "tirtrack/metrics.hpp"
#include "tirtrack/model.hpp"
#include "tirtrack/objective.hpp"
#include "tirtrack/ops.hpp"
#include "tirtrack/param_store.hpp"
#include "tirtrack/pyramid_fusion.hpp"
#include "tirtrack/sequence_io.hpp"
#include "tirtrack/synth.hpp"
#include "tirtrack/tensor.hpp"
#include "tirtrack/tracker.hpp"
#include "tirtrack/train.hpp"
#include "tirtrack/weights_io.hpp"
