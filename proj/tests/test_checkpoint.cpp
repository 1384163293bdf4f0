#include <doctest.h>

#include <cstdio>

#include "mung/checkpoint.hpp"
#include "mung/rng.hpp"
#include "mung/sha256.hpp"

using namespace mung;

TEST_CASE("checkpoint round-trips names, shapes and exact bits") {
    Rng rng(21);
    Checkpoint ck;
    ck.add("a/w", rng.normal_tensor({3, 4}));
    ck.add("a/b", rng.normal_tensor({4}));
    ck.add("b/scalar", Tensor::scalar(-0.125));

    const std::string path = "/tmp/mung_test_ckpt.bin";
    ck.save(path);
    Checkpoint back = Checkpoint::load(path);

    REQUIRE(back.entries.size() == 3);
    for (const auto& [name, t] : ck.entries) {
        REQUIRE(back.has(name));
        CHECK(back.get(name).shape() == t.shape());
        CHECK(back.get(name).data() == t.data());
    }
    CHECK(back.digest() == ck.digest());
    std::remove(path.c_str());
}

TEST_CASE("checkpoint digest is order-sensitive and content-sensitive") {
    Checkpoint a, b, c;
    a.add("x", Tensor::scalar(1.0));
    a.add("y", Tensor::scalar(2.0));
    b.add("y", Tensor::scalar(2.0));
    b.add("x", Tensor::scalar(1.0));
    c.add("x", Tensor::scalar(1.0));
    c.add("y", Tensor::scalar(2.5));
    CHECK(a.digest() != b.digest());
    CHECK(a.digest() != c.digest());
    CHECK(a.digest() == a.digest());
}

TEST_CASE("checkpoint rejects bad magic and truncation") {
    Checkpoint ck;
    ck.add("w", Tensor::scalar(3.0));
    auto bytes = ck.serialize();

    auto corrupted = bytes;
    corrupted[0] = 'X';
    CHECK_THROWS_AS(Checkpoint::deserialize(corrupted), ValueError);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    CHECK_THROWS_AS(Checkpoint::deserialize(truncated), ValueError);

    CHECK_THROWS_AS(Checkpoint::load("/tmp/does_not_exist_mung.bin"), ValueError);
}

TEST_CASE("checkpoint get on missing name names the entry") {
    Checkpoint ck;
    ck.add("present", Tensor::scalar(1.0));
    try {
        ck.get("absent");
        FAIL("expected ValueError");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("absent") != std::string::npos);
    }
}

TEST_CASE("sha256 matches known vectors") {
    auto hex = [](const std::string& s) { return Sha256::of(s.data(), s.size()); };
    CHECK(hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
