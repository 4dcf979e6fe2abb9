#pragma once

#include <filesystem>
#include <string>

#include "faithscope/model.hpp"

namespace testing_support {

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::path(FAITHSCOPE_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline faithscope::BiasRig color_rig() {
  faithscope::BiasRig rig;
  rig.biased_token = "green";
  rig.context_tokens = {"red", "orange", "yellow", "green", "blue", "purple",
                        "pink", "brown", "black", "white", "gray"};
  return rig;
}

}  // namespace testing_support
