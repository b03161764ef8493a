#ifndef TANLOSS_TANLOSS_HPP
#define TANLOSS_TANLOSS_HPP

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "evaluator.hpp"
#include "gradcheck.hpp"
#include "loss_metrics.hpp"
#include "network.hpp"
#include "optimizer.hpp"
#include "trainer.hpp"

#endif
