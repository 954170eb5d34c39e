#include "evmocap/event_file.hpp"

#include <algorithm>
#include <cstring>

#include "evmocap/error.hpp"

namespace evmocap {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', '1'};
constexpr std::size_t kChunkRecords = 1 << 16;

template <typename T>
void put_le(std::uint8_t* out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<std::uint8_t>(std::uint64_t(v) >> (8 * i));
}

template <typename T>
T get_le(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(in[i]) << (8 * i);
  return static_cast<T>(v);
}

SensorGeometry parse_header(const std::uint8_t* h, std::size_t got) {
  if (got < 4 || std::memcmp(h, kMagic, 4) != 0) throw ParseError(ParseError::Kind::BadMagic, 0, "bad magic");
  if (got < kEventFileHeaderBytes)
    throw ParseError(ParseError::Kind::TruncatedHeader, got, "truncated header");
  SensorGeometry g{get_le<std::uint16_t>(h + 4), get_le<std::uint16_t>(h + 6)};
  if (!g.valid()) throw ParseError(ParseError::Kind::BadMagic, 4, "zero sensor dimension");
  return g;
}

Event decode_record(const std::uint8_t* r, std::uint64_t offset, SensorGeometry g) {
  Event e;
  e.x = get_le<std::uint16_t>(r);
  e.y = get_le<std::uint16_t>(r + 2);
  auto p = static_cast<std::int8_t>(r[4]);
  if (p != 1 && p != -1) throw ParseError(ParseError::Kind::InvalidPolarity, offset + 4, "invalid polarity");
  e.polarity = p;
  e.t = get_le<std::uint64_t>(r + 8);
  if (!g.contains(e.x, e.y)) throw ParseError(ParseError::Kind::OutOfBounds, offset, "pixel outside sensor");
  return e;
}

void check_order(std::span<const Event> events, std::uint64_t& last_t, bool& any) {
  for (const auto& e : events) {
    if (any && e.t < last_t) throw OrderingError("events are not sorted by timestamp");
    last_t = e.t;
    any = true;
  }
}

}  // namespace

void encode_event(const Event& e, std::uint8_t* out) {
  put_le(out, e.x);
  put_le(out + 2, e.y);
  out[4] = static_cast<std::uint8_t>(e.polarity);
  out[5] = out[6] = out[7] = 0;
  put_le(out + 8, e.t);
}

void encode_header(SensorGeometry g, std::uint8_t* out) {
  std::memcpy(out, kMagic, 4);
  put_le(out + 4, static_cast<std::uint16_t>(g.width));
  put_le(out + 6, static_cast<std::uint16_t>(g.height));
  std::memset(out + 8, 0, 8);
}

void write_event_file(const std::filesystem::path& path, SensorGeometry geometry, std::span<const Event> events) {
  if (!is_time_sorted(events)) throw OrderingError("events are not sorted by timestamp");
  EventFileWriter w(path, geometry);
  w.write(events);
  w.close();
}

EventFileWriter::EventFileWriter(const std::filesystem::path& path, SensorGeometry geometry) : geometry_(geometry) {
  if (!geometry.valid() || geometry.width > 0xFFFF || geometry.height > 0xFFFF)
    throw Error("sensor geometry not representable in EVT1 header");
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
  std::uint8_t header[kEventFileHeaderBytes];
  encode_header(geometry, header);
  out_.write(reinterpret_cast<const char*>(header), sizeof(header));
  if (!out_) throw Error("write failed on " + path.string());
}

EventFileWriter::~EventFileWriter() {
  if (out_.is_open()) out_.close();
}

void EventFileWriter::write(std::span<const Event> events) {
  bool any = count_ > 0;
  check_order(events, last_t_, any);
  for (std::size_t begin = 0; begin < events.size(); begin += kChunkRecords) {
    std::size_t n = std::min(kChunkRecords, events.size() - begin);
    scratch_.resize(n * kEventRecordBytes);
    for (std::size_t i = 0; i < n; ++i) {
      const Event& e = events[begin + i];
      if (!geometry_.contains(e.x, e.y)) throw BoundsError("event pixel outside sensor geometry");
      if (e.polarity != 1 && e.polarity != -1) throw Error("event polarity must be -1 or +1");
      encode_event(e, scratch_.data() + i * kEventRecordBytes);
    }
    out_.write(reinterpret_cast<const char*>(scratch_.data()), std::streamsize(scratch_.size()));
    if (!out_) throw Error("event file write failed");
  }
  count_ += events.size();
}

void EventFileWriter::close() {
  if (!out_.is_open()) return;
  out_.flush();
  if (!out_) throw Error("event file flush failed");
  out_.close();
}

EventFile read_event_file(const std::filesystem::path& path) {
  FileEventSource src(path);
  EventFile f;
  f.geometry = src.geometry();
  while (src.read(f.events, kChunkRecords) > 0) {
  }
  return f;
}

FileEventSource::FileEventSource(const std::filesystem::path& path) {
  in_.open(path, std::ios::binary);
  if (!in_) throw ParseError(ParseError::Kind::Io, 0, "cannot open " + path.string());
  std::error_code ec;
  file_size_ = std::filesystem::file_size(path, ec);
  if (ec) throw ParseError(ParseError::Kind::Io, 0, "cannot stat " + path.string());
  std::uint8_t header[kEventFileHeaderBytes] = {};
  in_.read(reinterpret_cast<char*>(header), sizeof(header));
  geometry_ = parse_header(header, std::size_t(in_.gcount()));
}

std::size_t FileEventSource::read(std::vector<Event>& out, std::size_t max_events) {
  if (offset_ >= file_size_ || max_events == 0) return 0;
  std::uint64_t remaining = file_size_ - offset_;
  std::uint64_t whole = remaining / kEventRecordBytes;
  if (whole == 0) throw ParseError(ParseError::Kind::TruncatedRecord, offset_, "truncated record");
  std::size_t n = std::size_t(std::min<std::uint64_t>(whole, max_events));
  scratch_.resize(n * kEventRecordBytes);
  in_.read(reinterpret_cast<char*>(scratch_.data()), std::streamsize(scratch_.size()));
  if (std::size_t(in_.gcount()) != scratch_.size()) throw ParseError(ParseError::Kind::Io, offset_, "short read");
  out.reserve(out.size() + n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t off = offset_ + i * kEventRecordBytes;
    Event e = decode_record(scratch_.data() + i * kEventRecordBytes, off, geometry_);
    if (any_ && e.t < last_t_) throw ParseError(ParseError::Kind::NonMonotonic, off + 8, "non-monotonic timestamp");
    last_t_ = e.t;
    any_ = true;
    out.push_back(e);
  }
  offset_ += n * kEventRecordBytes;
  return n;
}

bool is_time_sorted(std::span<const Event> events) {
  return std::is_sorted(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
}

std::size_t SpanEventSource::read(std::vector<Event>& out, std::size_t max_events) {
  std::size_t n = std::min(max_events, events_.size() - pos_);
  out.insert(out.end(), events_.begin() + std::ptrdiff_t(pos_), events_.begin() + std::ptrdiff_t(pos_ + n));
  pos_ += n;
  return n;
}

}  // namespace evmocap
