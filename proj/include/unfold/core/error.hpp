#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace unfold {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// A tensor or parameter did not have the expected extent along one dimension.
class ShapeError : public Error {
public:
	ShapeError(const std::string& op, std::string dimension, long long expected, long long found)
		: Error(op + ": " + dimension + " expected " + std::to_string(expected) + ", found " + std::to_string(found)),
		  dimension_(std::move(dimension)), expected_(expected), found_(found) {}

	ShapeError(const std::string& op, std::string dimension, const std::string& detail)
		: Error(op + ": " + dimension + " " + detail), dimension_(std::move(dimension)) {}

	const std::string& dimension() const noexcept { return dimension_; }
	long long expected() const noexcept { return expected_; }
	long long found() const noexcept { return found_; }

private:
	std::string dimension_;
	long long expected_ = -1;
	long long found_ = -1;
};

class CheckpointError : public Error {
public:
	using Error::Error;
};

class BadMagicError : public CheckpointError {
public:
	explicit BadMagicError(const std::string& path)
		: CheckpointError("checkpoint " + path + ": bad magic bytes (not an UNFD file)") {}
};

class VersionError : public CheckpointError {
public:
	VersionError(const std::string& path, std::uint32_t expected, std::uint32_t found)
		: CheckpointError("checkpoint " + path + ": format version expected " + std::to_string(expected) +
						  ", found " + std::to_string(found)),
		  expected_(expected), found_(found) {}

	std::uint32_t expected() const noexcept { return expected_; }
	std::uint32_t found() const noexcept { return found_; }

private:
	std::uint32_t expected_;
	std::uint32_t found_;
};

/// Raised for checksum mismatches and for truncated files (whose trailer cannot be verified).
class ChecksumError : public CheckpointError {
public:
	using CheckpointError::CheckpointError;
};

/// Missing files or malformed manifests; carries the offending path.
class DatasetError : public Error {
public:
	DatasetError(std::string path, const std::string& detail)
		: Error(path + ": " + detail), path_(std::move(path)) {}

	const std::string& path() const noexcept { return path_; }

private:
	std::string path_;
};

class ConfigError : public Error {
public:
	using Error::Error;
};

/// Non-finite losses and failed gradient checks.
class NumericalError : public Error {
public:
	using Error::Error;
};

}  // namespace unfold
