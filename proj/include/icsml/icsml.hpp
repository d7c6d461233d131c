#pragma once

#include "icsml/error.hpp"
#include "icsml/buffer.hpp"
#include "icsml/math.hpp"
#include "icsml/sparse.hpp"
#include "icsml/quantization.hpp"
#include "icsml/layers.hpp"
#include "icsml/model_io.hpp"
#include "icsml/runtime.hpp"
#include "icsml/st_codegen.hpp"
