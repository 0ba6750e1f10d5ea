#pragma once

#include "gaitsf/cluster.hpp"
#include "gaitsf/common.hpp"
#include "gaitsf/config.hpp"
#include "gaitsf/dataset_io.hpp"
#include "gaitsf/encoder.hpp"
#include "gaitsf/eval.hpp"
#include "gaitsf/fusion.hpp"
#include "gaitsf/memory.hpp"
#include "gaitsf/parallel.hpp"
#include "gaitsf/pipeline.hpp"
#include "gaitsf/pretrain.hpp"
#include "gaitsf/serialize.hpp"
#include "gaitsf/silhouette.hpp"
#include "gaitsf/synth.hpp"
#include "gaitsf/workflow.hpp"
