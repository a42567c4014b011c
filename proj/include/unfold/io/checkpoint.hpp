#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "unfold/core/error.hpp"
#include "unfold/core/rng.hpp"
#include "unfold/params.hpp"

namespace unfold::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kAdamMPrefix[] = "@adam_m/";
inline constexpr char kAdamVPrefix[] = "@adam_v/";

/// Checkpoint layout (little-endian):
///   "UNFD" | u32 version | u64 iteration | u32 record count |
///   records: u32 name length, name bytes, u32 rank, u32 dims[rank], f32 payload |
///   u64 FNV-1a of every byte between the version field and the checksum.
/// Adam moments are stored as extra records named "@adam_m/<name>" and "@adam_v/<name>".
namespace ckpt_detail {

class Writer {
public:
	void u32(std::uint32_t v) {
		for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
	}
	void u64(std::uint64_t v) {
		for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
	}
	void str(const std::string& s) {
		u32(static_cast<std::uint32_t>(s.size()));
		bytes.insert(bytes.end(), s.begin(), s.end());
	}
	void record(const std::string& name, const std::vector<int>& shape, const std::vector<float>& values) {
		str(name);
		u32(static_cast<std::uint32_t>(shape.size()));
		for (int d : shape) u32(static_cast<std::uint32_t>(d));
		for (float v : values) u32(std::bit_cast<std::uint32_t>(v));
	}

	std::vector<std::uint8_t> bytes;
};

class Reader {
public:
	Reader(const std::vector<std::uint8_t>& b, std::size_t begin, std::size_t end, std::string path)
		: b_(b), pos_(begin), end_(end), path_(std::move(path)) {}

	std::uint32_t u32() {
		need(4);
		std::uint32_t v = 0;
		for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
		pos_ += 4;
		return v;
	}
	std::uint64_t u64() {
		need(8);
		std::uint64_t v = 0;
		for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
		pos_ += 8;
		return v;
	}
	std::string str() {
		const std::uint32_t n = u32();
		need(n);
		std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
		pos_ += n;
		return s;
	}
	bool done() const { return pos_ == end_; }

private:
	void need(std::size_t n) const {
		if (end_ - pos_ < n) throw CheckpointError("checkpoint " + path_ + ": malformed record");
	}

	const std::vector<std::uint8_t>& b_;
	std::size_t pos_;
	std::size_t end_;
	std::string path_;
};

inline std::uint64_t checksum(const std::vector<std::uint8_t>& b, std::size_t begin, std::size_t end) {
	std::uint64_t h = 0xcbf29ce484222325ULL;
	for (std::size_t i = begin; i < end; ++i) {
		h ^= b[i];
		h *= 0x100000001b3ULL;
	}
	return h;
}

}  // namespace ckpt_detail

inline std::vector<std::uint8_t> encode_checkpoint(const ParamStore<float>& store) {
	ckpt_detail::Writer w;
	w.bytes = {'U', 'N', 'F', 'D'};
	w.u32(kCheckpointVersion);
	w.u64(static_cast<std::uint64_t>(store.iteration()));
	w.u32(static_cast<std::uint32_t>(store.array_count() * 3));
	for (const auto& [name, p] : store) w.record(name, p.shape, p.value);
	for (const auto& [name, p] : store) w.record(kAdamMPrefix + name, p.shape, p.adam_m);
	for (const auto& [name, p] : store) w.record(kAdamVPrefix + name, p.shape, p.adam_v);
	w.u64(ckpt_detail::checksum(w.bytes, 8, w.bytes.size()));
	return std::move(w.bytes);
}

inline ParamStore<float> decode_checkpoint(const std::vector<std::uint8_t>& b, const std::string& path = "<memory>") {
	if (b.size() < 4) throw ChecksumError("checkpoint " + path + ": truncated (" + std::to_string(b.size()) + " bytes)");
	if (!(b[0] == 'U' && b[1] == 'N' && b[2] == 'F' && b[3] == 'D')) throw BadMagicError(path);
	if (b.size() < 8) throw ChecksumError("checkpoint " + path + ": truncated");
	const std::uint32_t version = ckpt_detail::Reader(b, 4, 8, path).u32();
	if (version != kCheckpointVersion) throw VersionError(path, kCheckpointVersion, version);
	if (b.size() < 8 + 8 + 4 + 8) throw ChecksumError("checkpoint " + path + ": truncated");
	const std::size_t body_end = b.size() - 8;
	const std::uint64_t stored = ckpt_detail::Reader(b, body_end, b.size(), path).u64();
	if (stored != ckpt_detail::checksum(b, 8, body_end))
		throw ChecksumError("checkpoint " + path + ": checksum mismatch (file truncated or corrupted)");

	ckpt_detail::Reader r(b, 8, body_end, path);
	ParamStore<float> store;
	const auto iteration = static_cast<std::int64_t>(r.u64());
	const std::uint32_t count = r.u32();
	struct Moment {
		std::string target;
		bool first;
		std::vector<int> shape;
		std::vector<float> values;
	};
	std::vector<Moment> moments;
	for (std::uint32_t i = 0; i < count; ++i) {
		const std::string name = r.str();
		const std::uint32_t rank = r.u32();
		if (rank > 8) throw CheckpointError("checkpoint " + path + ": record '" + name + "' has rank " + std::to_string(rank));
		std::vector<int> shape(rank);
		for (auto& d : shape) d = static_cast<int>(r.u32());
		std::vector<float> values(shape_volume(shape));
		for (auto& v : values) v = std::bit_cast<float>(r.u32());
		if (name.rfind(kAdamMPrefix, 0) == 0 || name.rfind(kAdamVPrefix, 0) == 0) {
			const bool first = name.rfind(kAdamMPrefix, 0) == 0;
			moments.push_back({name.substr(first ? sizeof kAdamMPrefix - 1 : sizeof kAdamVPrefix - 1), first,
							   std::move(shape), std::move(values)});
		} else {
			Param<float> p;
			p.shape = std::move(shape);
			p.value = std::move(values);
			store.insert(name, std::move(p));
		}
	}
	if (!r.done()) throw CheckpointError("checkpoint " + path + ": trailing bytes after the last record");
	for (auto& m : moments) {
		if (!store.contains(m.target)) throw CheckpointError("checkpoint " + path + ": moment for unknown array '" + m.target + "'");
		auto& p = store.at(m.target);
		if (p.shape != m.shape) throw CheckpointError("checkpoint " + path + ": moment shape mismatch for '" + m.target + "'");
		(m.first ? p.adam_m : p.adam_v) = std::move(m.values);
	}
	store.set_iteration(iteration);
	return store;
}

/// Writes to a sibling temporary file and renames it into place.
inline void save_checkpoint(const ParamStore<float>& store, const std::string& path) {
	const auto bytes = encode_checkpoint(store);
	const std::string tmp = path + ".tmp";
	{
		std::ofstream f(tmp, std::ios::binary);
		if (!f) throw CheckpointError("checkpoint " + path + ": cannot open for writing");
		f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
		if (!f) throw CheckpointError("checkpoint " + path + ": write failed");
	}
	std::filesystem::rename(tmp, path);
}

inline ParamStore<float> load_checkpoint(const std::string& path) {
	std::ifstream f(path, std::ios::binary);
	if (!f) throw CheckpointError("checkpoint " + path + ": cannot open");
	const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
	return decode_checkpoint(bytes, path);
}

/// Replaces the values of every array of `dst` with the same-named array of `src` (shapes must match).
/// Moments and the iteration counter are left untouched.
inline void copy_values(const ParamStore<float>& src, ParamStore<float>& dst, const std::string& origin) {
	for (auto& [name, p] : dst) {
		if (!src.contains(name)) throw CheckpointError("checkpoint " + origin + ": missing array '" + name + "'");
		const auto& q = src.at(name);
		if (q.shape != p.shape)
			throw ShapeError("checkpoint " + origin + " '" + name + "'", "shape",
							 "expected " + shape_string(p.shape) + ", found " + shape_string(q.shape));
		p.value = q.value;
	}
}

}  // namespace unfold::io
