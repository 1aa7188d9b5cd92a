#pragma once

#include "herdlife/autograd.hpp"
#include "herdlife/baselines.hpp"
#include "herdlife/checkpoint.hpp"
#include "herdlife/classes.hpp"
#include "herdlife/csv.hpp"
#include "herdlife/date.hpp"
#include "herdlife/error.hpp"
#include "herdlife/generator.hpp"
#include "herdlife/ingestion.hpp"
#include "herdlife/metrics.hpp"
#include "herdlife/optim.hpp"
#include "herdlife/parallel.hpp"
#include "herdlife/pipeline.hpp"
#include "herdlife/rng.hpp"
#include "herdlife/schema.hpp"
#include "herdlife/sequencing.hpp"
#include "herdlife/tables.hpp"
#include "herdlife/tensor.hpp"
#include "herdlife/transformer.hpp"
