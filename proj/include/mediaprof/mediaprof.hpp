#pragma once

// Everything except pipeline.hpp, which additionally needs OpenSSL.
#include "alexafeat.hpp"
#include "classify.hpp"
#include "common.hpp"
#include "embedding.hpp"
#include "evalkit.hpp"
#include "gnn.hpp"
#include "graphstore.hpp"
#include "node2vec.hpp"
#include "svm.hpp"
#include "synthgen.hpp"
