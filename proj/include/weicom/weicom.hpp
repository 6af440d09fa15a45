#pragma once

// Engine umbrella header. The HTTP layer lives in weicom/service.hpp and is
// not pulled in here.
#include "weicom/benchmark.hpp"
#include "weicom/embedding_store.hpp"
#include "weicom/error.hpp"
#include "weicom/fusion.hpp"
#include "weicom/parallel.hpp"
#include "weicom/similarity.hpp"
#include "weicom/synthetic.hpp"
