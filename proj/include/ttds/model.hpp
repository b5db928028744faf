#pragma once

#include "ttds/backbone.hpp"
#include "ttds/quantizer.hpp"
#include "ttds/vocab.hpp"

namespace ttds {

// Everything needed to render prompts and decode recommendations.
struct ModelBundle {
  Vocabulary vocab;
  Backbone<float> backbone;
  TwinTowerQuantizer<float> quantizer;
  IndexAssignment item_ids;
  IndexAssignment user_ids;

  const IndexAssignment& ids(Tower t) const { return t == Tower::item ? item_ids : user_ids; }
  IndexAssignment& ids(Tower t) { return t == Tower::item ? item_ids : user_ids; }
};

}  // namespace ttds
