#pragma once

#include "filterbubble/bubble.hpp"
#include "filterbubble/catlab.hpp"
#include "filterbubble/corpus.hpp"
#include "filterbubble/error.hpp"
#include "filterbubble/hash.hpp"
#include "filterbubble/nmf.hpp"
#include "filterbubble/parallel.hpp"
#include "filterbubble/pipeline.hpp"
#include "filterbubble/rankagg.hpp"
#include "filterbubble/svd.hpp"
#include "filterbubble/textpipe.hpp"
