import { afterEach, beforeEach, describe, expect, it } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";
import { fixedResponse, StubServer } from "./stub.js";

let stub: StubServer;

beforeEach(async () => {
  stub = new StubServer();
  await stub.start();
});

afterEach(async () => {
  await stub.stop();
});

describe("ApiClient", () => {
  it("fetches and parses the example gallery", async () => {
    const entries = [
      { id: "0", query: "red circles" },
      { id: "1", query: "all blue squares" },
    ];
    stub.respondWith = () => ({ status: 200, body: entries });
    const got = await new ApiClient(stub.url).examples();
    expect(got).toEqual(entries);
    expect(stub.seen[0]).toMatchObject({ method: "GET", path: "/examples" });
  });

  it("posts inference requests as JSON", async () => {
    stub.respondWith = () => ({ status: 200, body: fixedResponse([0.9]) });
    const response = await new ApiClient(stub.url).infer({
      image_id: "4",
      query: "triangles",
      score_threshold: 0,
      top_k: 5,
    });
    expect(response.detections).toHaveLength(1);
    expect(stub.seen[0].body).toMatchObject({ image_id: "4", query: "triangles" });
  });

  it("surfaces server error bodies verbatim", async () => {
    stub.respondWith = () => ({
      status: 404,
      body: { error: "service has no dataset" },
    });
    const call = new ApiClient(stub.url).examples();
    await expect(call).rejects.toThrow("service has no dataset");
    await expect(call).rejects.toBeInstanceOf(ApiError);
  });

  it("falls back to the HTTP status when the error body is not JSON", async () => {
    stub.respondWith = () => ({ status: 502, body: undefined });
    await expect(new ApiClient(stub.url).health()).rejects.toThrow("HTTP 502");
  });

  it("rejects when the service is unreachable", async () => {
    const url = stub.url;
    await stub.stop();
    await expect(new ApiClient(url).examples()).rejects.toThrow();
  });

  it("builds encoded example image urls", () => {
    const api = new ApiClient("http://host:1");
    expect(api.exampleImageUrl("12")).toBe("http://host:1/examples/12/image");
    expect(api.exampleImageUrl("a b")).toBe("http://host:1/examples/a%20b/image");
  });
});
