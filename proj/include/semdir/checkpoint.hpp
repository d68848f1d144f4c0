#pragma once

#include "semdir/container.hpp"
#include "semdir/model.hpp"

#include <filesystem>
#include <string>

namespace semdir {

/// Parameter blocks follow UNet::params() order: temb.lin1, temb.lin2, then
/// enc1..enc4 and dec1..dec4 (conv.weight, conv.bias, film.weight,
/// film.bias each), then out.conv.weight and out.conv.bias.
inline Container to_container(const EpsilonModel& model) {
  Container c;
  c.kind = "checkpoint";
  c.set("arch", model.arch().to_string());
  c.set("c_h", std::to_string(model.h_dim()));
  c.set("T", std::to_string(model.timesteps()));
  c.set("schedule", to_string(model.schedule().kind));
  c.set("snr_shift", format_double(model.schedule().snr_shift));
  for (const auto* p : model.net().params()) c.add_block(p->name, p->value);
  return c;
}

inline EpsilonModel model_from_container(const Container& c) {
  require(c.kind == "checkpoint", ErrorKind::format_error, "container is a '" + c.kind + "', not a checkpoint");
  const ArchConfig arch = ArchConfig::parse(c.get("arch"));
  require(std::stoi(c.get("c_h")) == arch.bottleneck, ErrorKind::format_error, "c_h disagrees with arch");
  UNet<double> net(arch);
  auto params = net.params();
  require(params.size() == c.blocks.size(), ErrorKind::format_error, "parameter block count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, m] = c.blocks[i];
    require(name == params[i]->name, ErrorKind::format_error, "unexpected block '" + name + "'");
    require(m.rows() == params[i]->value.rows() && m.cols() == params[i]->value.cols(), ErrorKind::format_error,
            "block '" + name + "' has wrong shape");
    params[i]->value = m;
  }
  const double shift = c.has("snr_shift") ? std::stod(c.get("snr_shift")) : 1.0;
  return EpsilonModel(std::move(net), make_schedule(std::stoi(c.get("T")), parse_schedule_kind(c.get("schedule")), shift));
}

inline void save_checkpoint(const EpsilonModel& model, const std::filesystem::path& path) {
  write_container(path, to_container(model));
}

inline EpsilonModel load_checkpoint(const std::filesystem::path& path) {
  return model_from_container(read_container(path));
}

}  // namespace semdir
