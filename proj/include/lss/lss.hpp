#pragma once

#include "lss/core.hpp"
#include "lss/rng.hpp"
#include "lss/image_io.hpp"
#include "lss/imaging.hpp"
#include "lss/pseudomask.hpp"
#include "lss/tinynet.hpp"
#include "lss/optimizer.hpp"
#include "lss/checkpoint.hpp"
#include "lss/pid_loss.hpp"
#include "lss/grading.hpp"
#include "lss/metrics_seg.hpp"
#include "lss/metrics_text.hpp"
#include "lss/dataset.hpp"
#include "lss/train.hpp"
