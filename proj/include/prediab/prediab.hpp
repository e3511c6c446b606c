#pragma once

#include "prediab/error.hpp"
#include "prediab/time.hpp"
#include "prediab/rng.hpp"
#include "prediab/data.hpp"
#include "prediab/butterworth.hpp"
#include "prediab/actigraphy.hpp"
#include "prediab/homeostasis.hpp"
#include "prediab/curvefeat.hpp"
#include "prediab/classify.hpp"
#include "prediab/synth.hpp"
#include "prediab/pipeline.hpp"
