#pragma once

#include "pdnet/backprop.hpp"
#include "pdnet/cpsolver.hpp"
#include "pdnet/dataset.hpp"
#include "pdnet/gradcheck.hpp"
#include "pdnet/image_io.hpp"
#include "pdnet/imaging.hpp"
#include "pdnet/linops.hpp"
#include "pdnet/network.hpp"
#include "pdnet/proxcalc.hpp"
#include "pdnet/serialization.hpp"
#include "pdnet/trainer.hpp"
