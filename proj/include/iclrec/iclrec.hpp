#pragma once

#include "iclrec/common.hpp"
#include "iclrec/autodiff.hpp"
#include "iclrec/data.hpp"
#include "iclrec/augment.hpp"
#include "iclrec/encoder.hpp"
#include "iclrec/losses.hpp"
#include "iclrec/clustering.hpp"
#include "iclrec/eval.hpp"
#include "iclrec/trainer.hpp"
#include "iclrec/checkpoint.hpp"
#include "iclrec/synthetic.hpp"
