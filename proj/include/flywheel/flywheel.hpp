// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "flywheel/agentic.hpp"
#include "flywheel/backend.hpp"
#include "flywheel/behavior_tree.hpp"
#include "flywheel/errors.hpp"
#include "flywheel/http_backend.hpp"
#include "flywheel/json_util.hpp"
#include "flywheel/mock_env.hpp"
#include "flywheel/prompts.hpp"
#include "flywheel/reasoning.hpp"
#include "flywheel/reward.hpp"
#include "flywheel/rollout.hpp"
#include "flywheel/store.hpp"
#include "flywheel/strings.hpp"
#include "flywheel/task_model.hpp"
#include "flywheel/tool_spec.hpp"
#include "flywheel/trajectory.hpp"
