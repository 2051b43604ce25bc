#pragma once

#include "kgrec/common.hpp"
#include "kgrec/content.hpp"
#include "kgrec/content_io.hpp"
#include "kgrec/data.hpp"
#include "kgrec/embedding_io.hpp"
#include "kgrec/eval.hpp"
#include "kgrec/gradcheck.hpp"
#include "kgrec/kmpn.hpp"
#include "kgrec/objectives.hpp"
#include "kgrec/optim.hpp"
#include "kgrec/sampler.hpp"
#include "kgrec/synthetic.hpp"
#include "kgrec/trainer.hpp"
