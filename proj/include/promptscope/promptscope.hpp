#pragma once

#include "promptscope/error.hpp"
#include "promptscope/embedding.hpp"
#include "promptscope/parallel.hpp"
#include "promptscope/store.hpp"
#include "promptscope/search.hpp"
#include "promptscope/lexicon.hpp"
#include "promptscope/eval.hpp"
#include "promptscope/provider.hpp"
#include "promptscope/import.hpp"
#include "promptscope/api.hpp"
#include "promptscope/service.hpp"
