#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "evmocap/event.hpp"

namespace evmocap {

// EVT1 layout (little endian):
//   header  : "EVT1" | u16 width | u16 height | 8 reserved zero bytes
//   records : u16 x | u16 y | i8 polarity | 3 zero bytes | u64 t
inline constexpr std::size_t kEventFileHeaderBytes = 16;
inline constexpr std::size_t kEventRecordBytes = 16;

void encode_event(const Event& e, std::uint8_t* out);
void encode_header(SensorGeometry g, std::uint8_t* out);

void write_event_file(const std::filesystem::path& path, SensorGeometry geometry, std::span<const Event> events);

struct EventFile {
  SensorGeometry geometry;
  std::vector<Event> events;
};

EventFile read_event_file(const std::filesystem::path& path);

/// Incremental EVT1 writer; validates ordering and bounds as records arrive.
class EventFileWriter {
 public:
  EventFileWriter(const std::filesystem::path& path, SensorGeometry geometry);
  ~EventFileWriter();

  void write(std::span<const Event> events);
  void close();
  std::uint64_t count() const { return count_; }

 private:
  std::ofstream out_;
  SensorGeometry geometry_;
  std::uint64_t count_ = 0;
  std::uint64_t last_t_ = 0;
  std::vector<std::uint8_t> scratch_;
};

/// Streaming reader exposing an EVT1 file as an EventSource. Parse errors are
/// raised from read() at the offending offset.
class FileEventSource final : public EventSource {
 public:
  explicit FileEventSource(const std::filesystem::path& path);

  SensorGeometry geometry() const override { return geometry_; }
  std::size_t read(std::vector<Event>& out, std::size_t max_events) override;

 private:
  std::ifstream in_;
  SensorGeometry geometry_;
  std::uint64_t file_size_ = 0;
  std::uint64_t offset_ = kEventFileHeaderBytes;
  std::uint64_t last_t_ = 0;
  bool any_ = false;
  std::vector<std::uint8_t> scratch_;
};

}  // namespace evmocap
