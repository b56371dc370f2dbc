#pragma once

// Everything: simulator, dataset, CDPR, model, training, evaluation, config
// and plotting.

#include "probid/core_types.hpp"
#include "probid/auction_sim.hpp"
#include "probid/dataset.hpp"
#include "probid/cdpr.hpp"
#include "probid/seqmodel.hpp"
#include "probid/gradcheck.hpp"
#include "probid/cro.hpp"
#include "probid/inference.hpp"
#include "probid/config.hpp"
#include "probid/pipeline.hpp"
#include "probid/plot.hpp"
