#pragma once

#include "ragcap/caption_pipeline.hpp"
#include "ragcap/conformance.hpp"
#include "ragcap/default_shots.hpp"
#include "ragcap/embedding_store.hpp"
#include "ragcap/error.hpp"
#include "ragcap/eval_metrics.hpp"
#include "ragcap/knn_search.hpp"
#include "ragcap/prompt_builder.hpp"
#include "ragcap/provider_gateway.hpp"
#include "ragcap/provider_server.hpp"
